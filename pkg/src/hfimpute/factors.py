"""
Static and dynamic estimators of latent factors from a complete panel.

All estimators return a :class:`FactorEstimate` in a common normalization:
``F'F/T = I_r``, ``L'L`` diagonal with decreasing entries, and the loading of
largest absolute value in each column positive.  The common component
``F @ L.T`` does not depend on the normalization.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg

from .grid import Panel

IDIO_FLOOR = 1e-6
RHO_CAP = 0.99

METHODS = ("PC", "MLE_H", "PC_GLS_H", "PC_GLS_HAR", "PC_KS")


@dataclass
class VarDynamics:
    """VAR(p) ``f_t = A_1 f_{t-1} + ... + A_p f_{t-p} + eta_t``, ``eta ~ N(0, innov_cov)``."""

    coefs: np.ndarray
    innov_cov: np.ndarray
    shrunk: bool = False

    def __post_init__(self):
        self.coefs = np.asarray(self.coefs, dtype=float)
        if self.coefs.ndim == 2:
            self.coefs = self.coefs[None]
        self.innov_cov = np.atleast_2d(np.asarray(self.innov_cov, dtype=float))

    @property
    def order(self) -> int:
        return self.coefs.shape[0]

    @property
    def dim(self) -> int:
        return self.innov_cov.shape[0]

    def companion(self) -> tuple[np.ndarray, np.ndarray]:
        """Companion transition and innovation covariance of the stacked state."""
        r, p = self.dim, max(self.order, 1)
        T = np.zeros((r * p, r * p))
        if self.order:
            T[:r, : r * self.order] = np.hstack(list(self.coefs))
        T[r:, :-r] = np.eye(r * (p - 1))
        Q = np.zeros_like(T)
        Q[:r, :r] = self.innov_cov
        return T, Q

    def spectral_radius(self) -> float:
        T, _ = self.companion()
        return float(np.max(np.abs(np.linalg.eigvals(T)))) if T.size else 0.0

    def stationary_cov(self) -> np.ndarray:
        """Unconditional covariance of the stacked state ``(f_t, ..., f_{t-p+1})``."""
        T, Q = self.companion()
        return _symmetrize(linalg.solve_discrete_lyapunov(T, Q))

    def to_dict(self) -> dict:
        return {"coefs": self.coefs.tolist(), "innov_cov": self.innov_cov.tolist(), "shrunk": self.shrunk}

    @classmethod
    def from_dict(cls, d: dict) -> "VarDynamics":
        return cls(np.asarray(d["coefs"]), np.asarray(d["innov_cov"]), bool(d.get("shrunk", False)))


@dataclass
class FactorEstimate:
    factors: np.ndarray
    loadings: np.ndarray
    idio_var: np.ndarray
    factor_cov: np.ndarray
    method: str
    ar_coefs: np.ndarray | None = None
    var: VarDynamics | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_factors(self) -> int:
        return self.factors.shape[1]

    def common_component(self) -> np.ndarray:
        return self.factors @ self.loadings.T

    def save(self, prefix) -> list[Path]:
        """Write ``<prefix>_factors.csv``, ``<prefix>_loadings.csv`` and ``<prefix>.json``."""
        prefix = Path(prefix)
        cols = [f"f{j + 1}" for j in range(self.n_factors)]
        paths = [prefix.with_name(prefix.name + "_factors.csv"),
                 prefix.with_name(prefix.name + "_loadings.csv"),
                 prefix.with_name(prefix.name + ".json")]
        pd.DataFrame(self.factors, columns=cols).to_csv(paths[0], index_label="t", float_format="%.17g")
        pd.DataFrame(self.loadings, columns=cols).to_csv(paths[1], index_label="series", float_format="%.17g")
        side = {
            "method": self.method,
            "idio_var": self.idio_var.tolist(),
            "factor_cov": self.factor_cov.tolist(),
            "ar_coefs": None if self.ar_coefs is None else self.ar_coefs.tolist(),
            "var": None if self.var is None else self.var.to_dict(),
            "diagnostics": _jsonable(self.diagnostics),
        }
        paths[2].write_text(json.dumps(side, indent=2, sort_keys=True))
        return paths

    @classmethod
    def load(cls, prefix) -> "FactorEstimate":
        prefix = Path(prefix)
        F = pd.read_csv(prefix.with_name(prefix.name + "_factors.csv"), index_col=0, float_precision="round_trip").to_numpy()
        L = pd.read_csv(prefix.with_name(prefix.name + "_loadings.csv"), index_col=0, float_precision="round_trip").to_numpy()
        side = json.loads(prefix.with_name(prefix.name + ".json").read_text())
        return cls(F, L, np.asarray(side["idio_var"]), np.asarray(side["factor_cov"]), side["method"],
                   None if side["ar_coefs"] is None else np.asarray(side["ar_coefs"]),
                   None if side["var"] is None else VarDynamics.from_dict(side["var"]),
                   side.get("diagnostics", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _as_complete_array(X) -> np.ndarray:
    if isinstance(X, Panel):
        if not X.complete:
            raise ValueError("estimator requires a complete panel; found missing entries")
        return np.array(X.values)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a T x N matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("estimator requires a complete panel; found missing entries")
    return X


def _check_rank(X: np.ndarray, r: int) -> None:
    T, N = X.shape
    if not 1 <= r <= min(N, T):
        raise ValueError(f"r={r} must lie in [1, min(N, T)] = [1, {min(N, T)}]")


def normalize(F: np.ndarray, L: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotate ``(F, L)`` to ``F'F/T = I``, ``L'L`` diagonal, largest loadings positive.

    Returns ``(F @ G, L @ inv(G).T, G)``.
    """
    T = F.shape[0]
    S = F.T @ F / T
    chol = np.linalg.cholesky(S)
    G1 = np.linalg.inv(chol).T                 # F G1 has identity second moment
    L1 = L @ chol
    evals, W = np.linalg.eigh(L1.T @ L1)
    W = W[:, np.argsort(evals)[::-1]]
    G = G1 @ W
    L2 = L1 @ W
    idx = np.argmax(np.abs(L2), axis=0)
    signs = np.sign(L2[idx, np.arange(L2.shape[1])])
    signs[signs == 0] = 1.0
    G = G * signs
    return F @ G, L2 * signs, G


def ar1_coef(e: np.ndarray, cap: float = RHO_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise AR(1) OLS slope without intercept, capped at ``|rho| <= cap``.

    Returns the capped coefficients and a boolean array flagging capped columns.
    """
    e = np.atleast_2d(np.asarray(e, dtype=float))
    if e.shape[0] == 1:
        e = e.T
    num = np.sum(e[1:] * e[:-1], axis=0)
    den = np.sum(e[:-1] ** 2, axis=0)
    rho = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    at_cap = np.abs(rho) >= cap
    return np.clip(rho, -cap, cap), at_cap


def estimate_pc(X, r: int) -> FactorEstimate:
    """Principal components: top-``r`` singular triplets of ``X / sqrt(NT)``."""
    X = _as_complete_array(X)
    _check_rank(X, r)
    T, N = X.shape
    U, d, Vt = np.linalg.svd(X / np.sqrt(N * T), full_matrices=False)
    if d[r - 1] <= d[0] * 1e-12:
        raise ValueError(f"r={r} exceeds the numerical rank of the panel")
    F = np.sqrt(T) * U[:, :r]
    L = np.sqrt(N) * Vt[:r].T * d[:r]
    F, L, _ = normalize(F, L)
    resid = X - F @ L.T
    phi = np.maximum(np.mean(resid ** 2, axis=0), IDIO_FLOOR)
    return FactorEstimate(F, L, phi, np.eye(r), "PC",
                          diagnostics={"singular_values": d[: min(len(d), r + 5)]})


def gls_project(loadings, idio_var, X) -> np.ndarray:
    """Weighted cross-section regression ``(L' P^-1 L)^-1 L' P^-1 x_t``.

    ``X`` may be a single ``N`` vector or a ``T x N`` matrix (rows projected).
    """
    L = np.asarray(loadings, dtype=float)
    w = 1.0 / np.asarray(idio_var, dtype=float)
    X = np.asarray(X, dtype=float)
    B = L.T * w                                  # r x N
    normal = B @ L
    if np.linalg.cond(normal) > 1e14:
        raise np.linalg.LinAlgError("singular GLS normal matrix L' Phi^-1 L")
    return np.linalg.solve(normal, B @ X.T).T


def project_static(loadings, idio_var, factor_cov, X) -> np.ndarray:
    """Conditional mean ``(S_F^-1 + L' P^-1 L)^-1 L' P^-1 x_t`` under joint normality."""
    L = np.asarray(loadings, dtype=float)
    S = np.atleast_2d(np.asarray(factor_cov, dtype=float))
    try:
        cs = linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise ValueError("factor covariance must be positive definite") from exc
    w = 1.0 / np.asarray(idio_var, dtype=float)
    B = L.T * w
    prec = linalg.cho_solve(cs, np.eye(S.shape[0])) + B @ L
    return np.linalg.solve(prec, B @ np.asarray(X, dtype=float).T).T


def factor_quasi_loglik(S: np.ndarray, L: np.ndarray, phi: np.ndarray, factor_cov=None) -> float:
    """Gaussian quasi log-likelihood ``-(log|Sigma| + tr(S Sigma^-1)) / (2N)``."""
    N, r = L.shape
    Sf = np.eye(r) if factor_cov is None else factor_cov
    sigma = L @ Sf @ L.T + np.diag(phi)
    sign, logdet = np.linalg.slogdet(sigma)
    return float(-(logdet + np.trace(np.linalg.solve(sigma, S))) / (2 * N))


def estimate_mle_h(X, r: int, max_iter: int = 1000, tol: float = 1e-8,
                   floor: float = IDIO_FLOOR) -> FactorEstimate:
    """Gaussian factor-analysis QMLE with diagonal ``Phi`` by EM, factors by GLS.

    Non-convergence and Heywood cases (``idio_var`` at the floor) are reported in
    ``diagnostics`` rather than raised.
    """
    X = _as_complete_array(X)
    T, N = X.shape
    if not 1 <= r < N:
        raise ValueError("MLE-h requires 1 <= r < N")
    S = X.T @ X / T
    pc = estimate_pc(X, r)
    L = pc.loadings.copy()
    phi = np.maximum(np.diag(S) - np.sum(L ** 2, axis=1), floor)

    path = [factor_quasi_loglik(S, L, phi)]
    converged = False
    for it in range(1, max_iter + 1):
        # E-step in the Sigma_F = I parameterization
        Lw = L / phi[:, None]
        M = np.eye(r) + L.T @ Lw
        beta = np.linalg.solve(M, Lw.T)            # r x N, = L' Sigma^-1
        SB = S @ beta.T                            # N x r
        Eff = np.eye(r) - beta @ L + beta @ SB
        L = np.linalg.solve(Eff, SB.T).T
        phi = np.maximum(np.diag(S) - np.sum(L * SB, axis=1), floor)
        path.append(factor_quasi_loglik(S, L, phi))
        if abs(path[-1] - path[-2]) < tol * abs(path[-2]):
            converged = True
            break

    F = gls_project(L, phi, X)
    F, L, G = normalize(F, L)
    factor_cov = G.T @ G                           # Sigma_F = I mapped into the new basis
    heywood = np.flatnonzero(phi <= floor * (1 + 1e-12))
    return FactorEstimate(F, L, phi, factor_cov, "MLE_H", diagnostics={
        "loglik_path": np.asarray(path), "iterations": it, "converged": converged,
        "heywood": heywood,
    })


def estimate_pc_gls_h(X, r: int, idio_var=None, updates: int = 1) -> FactorEstimate:
    """PC followed by a single GLS update of the factors using PC residual variances.

    ``updates > 1`` repeats the cycle (OLS loadings on the current factors,
    residual variances, GLS factors); the default is the one-step estimator.
    """
    if updates < 1:
        raise ValueError("updates must be at least 1")
    X = _as_complete_array(X)
    pc = estimate_pc(X, r)
    L = pc.loadings
    phi = pc.idio_var if idio_var is None else np.asarray(idio_var, dtype=float)
    F = gls_project(L, phi, X)
    for _ in range(updates - 1):
        L = np.linalg.lstsq(F, X, rcond=None)[0].T
        if idio_var is None:
            phi = np.maximum(np.mean((X - F @ L.T) ** 2, axis=0), IDIO_FLOOR)
        F = gls_project(L, phi, X)
    F, L, _ = normalize(F, L)
    return FactorEstimate(F, L, phi, np.eye(r), "PC_GLS_H")


def estimate_pc_gls_har(X, r: int, rho=None, cap: float = RHO_CAP) -> FactorEstimate:
    """PC with loadings re-estimated on quasi-differenced data and a GLS factor update.

    Per-series AR(1) coefficients come from the PC residuals.  Loadings solve
    OLS of ``(1 - rho_i L) x_i`` on ``(1 - rho_i L) F`` with a Prais-Winsten
    first row, so ``rho = 0`` reduces to plain OLS on all ``T`` rows.  Factors
    are then re-projected by GLS with the innovation variances.
    """
    X = _as_complete_array(X)
    T, N = X.shape
    pc = estimate_pc(X, r)
    F0 = pc.factors
    resid = X - F0 @ pc.loadings.T
    if rho is None:
        rho, at_cap = ar1_coef(resid, cap)
    else:
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (N,)).copy()
        at_cap = np.abs(rho) >= cap
        rho = np.clip(rho, -cap, cap)

    L = np.empty((N, r))
    sig2 = np.empty(N)
    for i in range(N):
        xq, Fq = _quasi_difference(X[:, i], F0, rho[i])
        coef, *_ = np.linalg.lstsq(Fq, xq, rcond=None)
        L[i] = coef
        sig2[i] = np.mean((xq - Fq @ coef) ** 2)
    sig2 = np.maximum(sig2, IDIO_FLOOR)
    F = gls_project(L, sig2, X)
    F, L, _ = normalize(F, L)
    return FactorEstimate(F, L, sig2, np.eye(r), "PC_GLS_HAR", ar_coefs=rho,
                          diagnostics={"near_unit_root": np.flatnonzero(at_cap)})


def _quasi_difference(x: np.ndarray, F: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    w = np.sqrt(1.0 - rho ** 2)
    xq = np.r_[w * x[0], x[1:] - rho * x[:-1]]
    Fq = np.vstack([w * F[:1], F[1:] - rho * F[:-1]])
    return xq, Fq


def fit_var(F, p: int) -> VarDynamics:
    """Equation-by-equation OLS VAR(p) without intercept (factors are mean zero).

    A fit whose companion spectral radius is not below ``1 - 1e-6`` is shrunk
    radially to radius 0.99 and flagged with ``shrunk=True``.
    """
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    T, r = F.shape
    if p < 1:
        raise ValueError("VAR order must be >= 1")
    if T <= r * p + 1:
        raise ValueError(f"need T > r*p + 1 = {r * p + 1} observations, got {T}")
    Y = F[p:]
    Z = np.hstack([F[p - j - 1 : T - j - 1] for j in range(p)])
    B, *_ = np.linalg.lstsq(Z, Y, rcond=None)
    resid = Y - Z @ B
    coefs = B.T.reshape(r, p, r).transpose(1, 0, 2)
    var = VarDynamics(coefs, _symmetrize(resid.T @ resid / Y.shape[0]))
    rad = var.spectral_radius()
    if rad >= 1 - 1e-6:
        scale = 0.99 / rad
        var = VarDynamics(coefs * scale ** np.arange(1, p + 1)[:, None, None], var.innov_cov, shrunk=True)
    return var


def estimate_pc_ks(X, r: int, p: int = 1) -> FactorEstimate:
    """PC initialization, VAR(p) on the PC factors, then Kalman-smoothed factors.

    On complete data the smoothed factors equal the joint Gaussian projection
    of all factors on the whole panel.
    """
    from .statespace import factor_model, kalman_smoother

    X = _as_complete_array(X)
    pc = estimate_pc(X, r)
    var = fit_var(pc.factors, p)
    model = factor_model(pc.loadings, pc.idio_var, var)
    sm = kalman_smoother(model, X)
    F = sm.mean[:, :r]
    F, L, G = normalize(F, pc.loadings)
    var_new = rotate_var(var, G)
    return FactorEstimate(F, L, pc.idio_var, G.T @ var.stationary_cov()[:r, :r] @ G,
                          "PC_KS", var=var_new, diagnostics={"var_shrunk": var.shrunk,
                                                             "loglik": sm.loglik})


def rotate_var(var: VarDynamics, G: np.ndarray) -> VarDynamics:
    """Express VAR dynamics of ``f`` in terms of ``g = G' f`` (i.e. ``F_new = F @ G``)."""
    Gt = G.T
    Gt_inv = np.linalg.inv(Gt)
    coefs = np.stack([Gt @ A @ Gt_inv for A in var.coefs])
    return VarDynamics(coefs, _symmetrize(Gt @ var.innov_cov @ G), var.shrunk)


ESTIMATORS = {
    "PC": lambda X, r, p=1: estimate_pc(X, r),
    "MLE_H": lambda X, r, p=1: estimate_mle_h(X, r),
    "PC_GLS_H": lambda X, r, p=1: estimate_pc_gls_h(X, r),
    "PC_GLS_HAR": lambda X, r, p=1: estimate_pc_gls_har(X, r),
    "PC_KS": lambda X, r, p=1: estimate_pc_ks(X, r, p),
}


def estimate(X, r: int, method: str = "PC", p: int = 1) -> FactorEstimate:
    key = method.upper().replace("-", "_")
    if key not in ESTIMATORS:
        raise ValueError(f"unknown estimator {method!r}; choose from {', '.join(METHODS)}")
    return ESTIMATORS[key](X, r, p)
