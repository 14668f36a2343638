import numpy as np
import pytest

from oracles import covariance_filter, dense_posterior, state_moments
from hfimpute.factors import VarDynamics, estimate_mle_h, project_static
from hfimpute.statespace import (StateSpaceModel, back_out_target_rho, build_ks_star, build_method_a,
                                 build_method_b, em_dfm, factor_model, kalman_filter, kalman_smoother,
                                 skip_sampled_rho, smoothed_observations, smoothed_states_frame)

VAR2 = VarDynamics(np.array([[[0.7, 0.1], [-0.2, 0.5]]]), np.array([[1.0, 0.3], [0.3, 0.8]]))


def random_factor_model(rng, N=6, var=VAR2):
    r = var.dim
    return factor_model(rng.normal(size=(N, r)), rng.uniform(0.3, 1.5, N), var)


def simulate(model, T, rng):
    k = model.n_states
    a = rng.multivariate_normal(model.init_mean, model.init_cov)
    X = np.empty((T, model.n_obs))
    for t in range(T):
        X[t] = model.obs_load @ a + rng.normal(size=model.n_obs) * np.sqrt(model.obs_noise)
        a = model.trans @ a + rng.multivariate_normal(np.zeros(k), model.trans_cov)
    return X


def simulate_ar_errors(rng, T, N, r, rho, s2, var):
    F = np.zeros((T, r))
    F[0] = rng.multivariate_normal(np.zeros(r), var.stationary_cov()[:r, :r])
    for t in range(1, T):
        F[t] = var.coefs[0] @ F[t - 1] + rng.multivariate_normal(np.zeros(r), var.innov_cov)
    e = np.zeros((T, N))
    e[0] = rng.normal(size=N) * np.sqrt(s2 / (1 - rho ** 2))
    for t in range(1, T):
        e[t] = rho * e[t - 1] + rng.normal(size=N) * np.sqrt(s2)
    return F, e


def test_filter_and_smoother_match_dense_posterior(rng):
    model = random_factor_model(rng)
    X = simulate(model, 15, rng)
    X[rng.random(X.shape) < 0.3] = np.nan
    X[4] = np.nan
    ll, mean, cov = dense_posterior(model, X)
    sm = kalman_smoother(model, X)
    assert sm.loglik == pytest.approx(ll, rel=1e-12)
    np.testing.assert_allclose(sm.mean, mean, atol=1e-10)
    k = model.n_states
    for t in range(15):
        np.testing.assert_allclose(sm.cov[t], cov[t * k:(t + 1) * k, t * k:(t + 1) * k], atol=1e-10)
    for t in range(1, 15):
        np.testing.assert_allclose(sm.lag_cov[t], cov[t * k:(t + 1) * k, (t - 1) * k:t * k], atol=1e-10)


def test_smoothed_factors_equal_dense_projection():
    rng = np.random.default_rng(3)
    T, N, r = 25, 6, 2
    L = rng.normal(size=(N, r))
    phi = rng.uniform(0.3, 1.5, N)
    model = factor_model(L, phi, VAR2)
    X = simulate(model, T, rng)
    _, S_F = state_moments(model, T)
    W = np.kron(np.eye(T), L.T / phi)                     # (I_T kron L' Phi^-1)
    A = np.linalg.inv(S_F) + np.kron(np.eye(T), L.T @ (L / phi[:, None]))
    dense = np.linalg.solve(A, W @ X.ravel()).reshape(T, r)
    np.testing.assert_allclose(kalman_smoother(model, X).mean, dense, atol=1e-8)


def test_masked_filter_equals_row_reduced_filter():
    rng = np.random.default_rng(4)
    model = random_factor_model(rng, N=5)
    X = simulate(model, 30, rng)
    for _ in range(50):
        Xm = np.where(rng.random(X.shape) < 0.35, np.nan, X)
        f = kalman_filter(model, Xm)
        means, covs, ll = covariance_filter(model, Xm)
        np.testing.assert_allclose(f.filt_mean, means, atol=1e-12, rtol=1e-12)
        np.testing.assert_allclose(f.filt_cov, covs, atol=1e-12, rtol=1e-12)
        assert f.loglik == pytest.approx(ll, rel=1e-12)


def test_fully_missing_period_propagates_prediction(rng):
    model = random_factor_model(rng)
    X = simulate(model, 6, rng)
    X[3] = np.nan
    f = kalman_filter(model, X)
    np.testing.assert_array_equal(f.filt_mean[3], f.pred_mean[3])
    np.testing.assert_array_equal(f.filt_cov[3], f.pred_cov[3])
    Tm, Q = model.trans, model.trans_cov
    np.testing.assert_allclose(f.pred_cov[4], Tm @ f.filt_cov[3] @ Tm.T + Q, atol=1e-14)
    assert f.loglik_t[3] == 0.0


def test_static_model_filter_is_per_period_projection(rng):
    L = rng.normal(size=(7, 2))
    phi = rng.uniform(0.2, 1.0, 7)
    Sf = np.array([[1.0, 0.4], [0.4, 2.0]])
    model = factor_model(L, phi, factor_cov=Sf)
    X = rng.normal(size=(12, 7))
    f = kalman_filter(model, X)
    np.testing.assert_allclose(f.filt_mean, project_static(L, phi, Sf, X), atol=1e-10)


def test_smoother_boundaries(rng):
    model = random_factor_model(rng)
    X = simulate(model, 10, rng)
    sm = kalman_smoother(model, X)
    np.testing.assert_array_equal(sm.mean[-1], sm.filtered.filt_mean[-1])
    np.testing.assert_array_equal(sm.cov[-1], sm.filtered.filt_cov[-1])
    one = kalman_smoother(model, X[:1])
    np.testing.assert_array_equal(one.mean, one.filtered.filt_mean)


def test_model_validation_and_serialization(tmp_path, rng):
    with pytest.raises(ValueError):
        StateSpaceModel(np.ones((2, 1)), [1.0, -1.0], [[0.5]], [[1.0]], [0.0], [[1.0]])
    with pytest.raises(ValueError):
        StateSpaceModel(np.ones((2, 1)), [1.0, 1.0], [[0.5]], [[-1.0]], [0.0], [[1.0]])
    with pytest.raises(ValueError):
        kalman_filter(random_factor_model(rng), np.zeros((4, 3)))
    X = rng.normal(size=(8, 3))
    X[2, 1] = np.nan
    model = build_method_a(rng.normal(size=(3, 1)), [0.5, 0.4, 0.3],
                           VarDynamics(np.array([[[0.5]]]), np.eye(1)), [0.2, 0.0, 0.5],
                           rng.normal(size=(8, 3)), first_period="drop")
    model.dump(tmp_path / "m.json")
    back = StateSpaceModel.restore(tmp_path / "m.json")
    np.testing.assert_array_equal(back.intercept, model.intercept)
    assert back.layout == model.layout
    assert kalman_filter(back, X).loglik == kalman_filter(model, X).loglik
    frame = smoothed_states_frame(kalman_smoother(model, X), model)
    assert list(frame.columns) == ["factor_0_0", "factor_1_0"]


# ---------------------------------------------------------------------------
# AR(1) idiosyncratic errors


def test_method_a_with_zero_rho_is_the_plain_model(rng):
    var = VarDynamics(np.array([[[0.6]]]), np.eye(1))
    L = rng.normal(size=(4, 1))
    s2 = rng.uniform(0.3, 1, 4)
    X = rng.normal(size=(50, 4))
    a = build_method_a(L, s2, var, 0.0, X)
    plain = factor_model(L, s2, var)
    assert a.n_states == 2
    assert kalman_filter(a, X).loglik == pytest.approx(kalman_filter(plain, X).loglik, rel=1e-8)
    np.testing.assert_allclose(kalman_smoother(a, X).mean[:, 0], kalman_smoother(plain, X).mean[:, 0],
                               atol=1e-8)


def test_method_a_matches_method_b_and_dense_oracle():
    rng = np.random.default_rng(6)
    T, N, r = 40, 4, 1
    var = VarDynamics(np.array([[[0.8]]]), np.array([[0.36]]))
    L = rng.normal(size=(N, r))
    rho = np.array([0.7, -0.3, 0.5, 0.9])
    s2 = rng.uniform(0.2, 0.6, N)
    F, e = simulate_ar_errors(rng, T, N, r, rho, s2, var)
    X = F @ L.T + e
    ma = build_method_a(L, s2, var, rho, X)
    mb = build_method_b(L, s2, var, rho)
    assert ma.n_states == 2 * r and mb.n_states == r + N
    fa = kalman_smoother(ma, X).mean[:, 0]
    fb = kalman_smoother(mb, X).mean[:, 0]
    np.testing.assert_allclose(fa, fb, atol=1e-6)
    ll, mean, _ = dense_posterior(ma, X)
    assert kalman_filter(ma, X).loglik == pytest.approx(ll, rel=1e-10)
    np.testing.assert_allclose(fa, mean[:, 0], atol=1e-9)


def test_method_a_state_dimension_does_not_grow_with_n(rng):
    var = VarDynamics(np.array([[[0.5, 0], [0, 0.2]]]), np.eye(2))
    for N in (3, 30):
        m = build_method_a(rng.normal(size=(N, 2)), np.ones(N), var, 0.5, rng.normal(size=(5, N)))
        assert m.n_states == 4


def test_method_b_exact_observation_limit_is_stable():
    rng = np.random.default_rng(7)
    var = VarDynamics(np.array([[[0.8]]]), np.array([[0.36]]))
    L = rng.normal(size=(4, 1))
    F, e = simulate_ar_errors(rng, 100, 4, 1, np.full(4, 0.8), np.full(4, 0.3), var)
    X = F @ L.T + e
    X[rng.random(X.shape) < 0.3] = np.nan
    model = build_method_b(L, np.full(4, 0.3), var, 0.8, xi_var=0.0)
    sm = kalman_smoother(model, X)
    assert np.isfinite(sm.loglik) and np.all(np.isfinite(sm.mean))
    fitted = smoothed_observations(model, sm)
    obs = np.isfinite(X)
    np.testing.assert_allclose(fitted[obs], X[obs], atol=1e-3)


@pytest.mark.slow
def test_method_b_reconstruction_beats_white_noise_model():
    rng = np.random.default_rng(8)
    T, N, rho, s2 = 120, 4, 0.8, 0.3
    var = VarDynamics(np.array([[[0.7]]]), np.array([[0.51]]))
    wins = 0
    for _ in range(200):
        L = rng.normal(size=(N, 1))
        F, e = simulate_ar_errors(rng, T, N, 1, np.full(N, rho), np.full(N, s2), var)
        X = F @ L.T + e
        miss = rng.random(X.shape) < 0.3
        Xm = np.where(miss, np.nan, X)
        mb = build_method_b(L, np.full(N, s2), var, rho)
        white = factor_model(L, np.full(N, s2 / (1 - rho ** 2)), var)
        err_b = np.mean((smoothed_observations(mb, kalman_smoother(mb, Xm))[miss] - X[miss]) ** 2)
        err_w = np.mean((smoothed_observations(white, kalman_smoother(white, Xm))[miss] - X[miss]) ** 2)
        wins += err_b < err_w
    assert wins >= 160


def test_ks_star_with_no_serial_correlation_is_the_joint_model(rng):
    T, No, r = 60, 5, 1
    var = VarDynamics(np.array([[[0.6]]]), np.eye(1))
    L = rng.normal(size=(No, r))
    lam_y = rng.normal(size=r)
    s2 = rng.uniform(0.3, 1, No)
    s2_y = 0.4
    X = rng.normal(size=(T, No + 1))
    X[rng.random(T) < 0.6, -1] = np.nan
    star = build_ks_star(np.zeros(No), 0.0, L, lam_y, var, s2, s2_y, X)
    plain = factor_model(np.vstack([L, lam_y]), np.r_[s2, s2_y], var)
    assert star.n_states == 2 * r + 1
    ys = smoothed_observations(star, kalman_smoother(star, X))[:, -1]
    yp = smoothed_observations(plain, kalman_smoother(plain, X))[:, -1]
    miss = np.isnan(X[:, -1])
    np.testing.assert_allclose(ys[miss], yp[miss], atol=1e-8)
    # at observed points the error state absorbs the residual
    np.testing.assert_allclose(ys[~miss], X[~miss, -1], atol=1e-6)


def test_ks_star_dimension_and_dense_oracle(rng):
    var = VarDynamics(np.array([[[0.6, 0.0], [0.1, 0.3]]]), np.eye(2))
    for No in (3, 40):
        X = rng.normal(size=(10, No + 1))
        X[::2, -1] = np.nan
        m = build_ks_star(rng.uniform(-0.5, 0.9, No), 0.8, rng.normal(size=(No, 2)), [0.5, -0.2], var,
                          np.full(No, 0.5), 0.2, X, xi_var=0.05)
        assert m.n_states == 5
    ll, mean, _ = dense_posterior(m, X)
    assert kalman_filter(m, X).loglik == pytest.approx(ll, rel=1e-10)
    np.testing.assert_allclose(kalman_smoother(m, X).mean, mean, atol=1e-8)


def test_ks_star_requires_complete_predictors(rng):
    var = VarDynamics(np.array([[[0.5]]]), np.eye(1))
    X = rng.normal(size=(10, 3))
    X[2, 0] = np.nan
    with pytest.raises(ValueError):
        build_ks_star(np.zeros(2), 0.5, np.ones((2, 1)), [1.0], var, np.ones(2), 1.0, X)
    with pytest.raises(ValueError):
        build_ks_star(np.zeros(2), 0.5, np.ones((2, 1)), [1.0], var, np.ones(2), 1.0, X[:, :2])


def test_back_out_target_rho():
    assert back_out_target_rho(0.7, 1.0) == 0.7
    assert back_out_target_rho(0.729, 1 / 3) == pytest.approx(0.9, abs=1e-12)
    assert skip_sampled_rho(0.9, 1 / 3) == pytest.approx(0.729, abs=1e-12)
    for share in (0.2, 0.22, 0.25):
        assert 0 < back_out_target_rho(0.5, share) < 1
    for bad in ((1.0, 0.5), (0.0, 0.5), (0.5, 0.0), (0.5, 1.5)):
        with pytest.raises(ValueError):
            back_out_target_rho(*bad)


def test_skip_sampled_persistence_matches_simulation():
    rng = np.random.default_rng(9)
    T = 300_000
    u = rng.normal(size=T)
    x = np.empty(T)
    x[0] = u[0]
    for t in range(1, T):
        x[t] = 0.9 * x[t - 1] + u[t]
    sub = x[2::3]
    rho_hat = sub[1:] @ sub[:-1] / (sub[:-1] @ sub[:-1])
    assert rho_hat == pytest.approx(skip_sampled_rho(0.9, 1 / 3), abs=0.01)
    assert back_out_target_rho(rho_hat, 1 / 3) == pytest.approx(0.9, abs=0.01)


# ---------------------------------------------------------------------------
# EM


@pytest.mark.slow
def test_em_likelihood_is_monotone_and_recovers_common_component():
    rng = np.random.default_rng(10)
    T, N = 1000, 10
    var = VarDynamics(np.array([[[0.7]]]), np.array([[1.0]]))
    L = rng.uniform(0.5, 1.5, size=(N, 1))
    R = rng.uniform(0.3, 1.0, N)
    truth = factor_model(L, R, var)
    X = simulate(truth, T, rng)
    fit = em_dfm(X, 1, 1, tol=1e-9)
    assert fit.converged
    assert np.all(np.diff(fit.loglik_path) >= -1e-8 * np.abs(fit.loglik_path[1:]))
    # innovation variance is pinned at 1, so loadings and dynamics are identified up to sign
    np.testing.assert_allclose(np.abs(fit.model.obs_load[:, 0]), L[:, 0], atol=0.1)
    np.testing.assert_allclose(fit.model.obs_noise, R, atol=4 * R.max() * np.sqrt(2 / T))
    assert fit.var.coefs[0, 0, 0] == pytest.approx(0.7, abs=0.05)


def test_em_with_missing_entries_keeps_common_component_accuracy():
    rng = np.random.default_rng(11)
    T, N = 300, 10
    var = VarDynamics(np.array([[[0.8]]]), np.array([[0.36]]))
    truth = factor_model(rng.uniform(0.5, 1.5, size=(N, 1)), rng.uniform(0.3, 1.0, N), var)
    a = np.zeros(T)
    a[0] = rng.normal()
    for t in range(1, T):
        a[t] = 0.8 * a[t - 1] + 0.6 * rng.normal()
    common = np.outer(a, truth.obs_load[:, 0])
    X = common + rng.normal(size=(T, N)) * np.sqrt(truth.obs_noise)
    Xm = X.copy()
    Xm[rng.random(X.shape) < 0.2] = np.nan
    full = em_dfm(X, 1, 1, tol=1e-7)
    part = em_dfm(Xm, 1, 1, tol=1e-7)
    mse_full = np.mean((smoothed_observations(full.model, full.smoothed) - common) ** 2)
    mse_part = np.mean((smoothed_observations(part.model, part.smoothed) - common) ** 2)
    assert mse_part <= 1.5 * mse_full


@pytest.mark.slow
def test_em_static_limit_agrees_with_mle_h():
    rng = np.random.default_rng(12)
    T, N = 2000, 20
    L = rng.uniform(0.5, 1.5, size=(N, 1))
    X = rng.normal(size=(T, 1)) @ L.T + rng.normal(size=(T, N)) * np.sqrt(rng.uniform(0.2, 1.0, N))
    fit = em_dfm(X, 1, p=0, tol=1e-9)
    mle = estimate_mle_h(X, 1)
    a, b = fit.model.obs_load[:, 0], mle.loadings[:, 0]
    angle = np.degrees(np.arccos(abs(a @ b) / np.linalg.norm(a) / np.linalg.norm(b)))
    assert angle < 5


def test_em_argument_checks(rng):
    X = rng.normal(size=(30, 4))
    with pytest.raises(ValueError):
        em_dfm(X, 4)
    with pytest.raises(ValueError):
        em_dfm(X, 1, p=-1)
    X[:, 2] = np.nan
    with pytest.raises(ValueError):
        em_dfm(X, 1)
