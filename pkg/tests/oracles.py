"""Independent dense-algebra reference computations used by the tests."""
import numpy as np
from scipy import linalg


def state_moments(model, T):
    """Mean and covariance of the stacked states a_0..a_{T-1}."""
    k = model.n_states
    Tm, Q = model.trans, model.trans_cov
    var = [model.init_cov]
    for _ in range(1, T):
        var.append(Tm @ var[-1] @ Tm.T + Q)
    means = [model.init_mean]
    for _ in range(1, T):
        means.append(Tm @ means[-1])
    cov = np.zeros((T * k, T * k))
    for s in range(T):
        block = var[s]
        for t in range(s, T):
            cov[t * k:(t + 1) * k, s * k:(s + 1) * k] = block
            cov[s * k:(s + 1) * k, t * k:(t + 1) * k] = block.T
            block = Tm @ block
    return np.concatenate(means), cov


def dense_posterior(model, X):
    """Log likelihood, smoothed means and the full posterior covariance by one big Gaussian conditioning."""
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    k = model.n_states
    mu_a, S_a = state_moments(model, T)
    rows, obs_vals, obs_mean, noise = [], [], [], []
    for t in range(T):
        Z, h = model.obs_load, model.obs_noise
        if t == 0 and model.first_load is not None:
            Z, h = model.first_load, model.first_noise
        c = np.zeros(N) if model.intercept is None else model.intercept[t]
        for i in range(N):
            if np.isfinite(X[t, i]) and np.isfinite(c[i]):
                row = np.zeros(T * k)
                row[t * k:(t + 1) * k] = Z[i]
                rows.append(row)
                obs_vals.append(X[t, i])
                obs_mean.append(c[i] + Z[i] @ mu_a[t * k:(t + 1) * k])
                noise.append(h[i])
    H = np.array(rows)
    Sxx = H @ S_a @ H.T + np.diag(noise)
    Sax = S_a @ H.T
    dev = np.array(obs_vals) - np.array(obs_mean)
    cf = linalg.cho_factor(Sxx)
    mean = mu_a + Sax @ linalg.cho_solve(cf, dev)
    cov = S_a - Sax @ linalg.cho_solve(cf, Sax.T)
    n = dev.size
    ll = -0.5 * (n * np.log(2 * np.pi) + 2 * np.log(np.diag(cf[0])).sum() + dev @ linalg.cho_solve(cf, dev))
    return ll, mean.reshape(T, k), cov


def covariance_filter(model, X):
    """Textbook covariance-form filter on the row-reduced system of each period."""
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    a, P = model.init_mean.copy(), model.init_cov.copy()
    means, covs, ll = [], [], 0.0
    for t in range(T):
        keep = np.isfinite(X[t])
        if keep.any():
            Z = model.obs_load[keep]
            H = np.diag(model.obs_noise[keep])
            v = X[t, keep] - Z @ a
            F = Z @ P @ Z.T + H
            K = P @ Z.T @ np.linalg.inv(F)
            a = a + K @ v
            P = P - K @ Z @ P
            ll += -0.5 * (keep.sum() * np.log(2 * np.pi) + np.linalg.slogdet(F)[1] + v @ np.linalg.solve(F, v))
        means.append(a.copy())
        covs.append(P.copy())
        a = model.trans @ a
        P = model.trans @ P @ model.trans.T + model.trans_cov
    return np.array(means), np.array(covs), ll
