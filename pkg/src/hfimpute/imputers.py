"""
Imputation of a partially observed target series on a high-frequency grid.

Every imputer accepts the target either as a low-frequency vector together
with a :class:`~hfimpute.grid.TimeGrid` (values are placed at their release
sub-period) or directly as a high-frequency vector with NaN at unobserved
positions.  Observed values are always returned unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg, optimize

from .factors import IDIO_FLOOR, RHO_CAP, VarDynamics, ar1_coef, estimate_pc
from .grid import Panel, TimeGrid, embed_low_frequency
from .statespace import (back_out_target_rho, build_ks_star, em_dfm, kalman_filter,
                         kalman_smoother, smoothed_observations)

log = logging.getLogger(__name__)

METHODS = ("TP", "EM", "CL", "TP_STAR", "KS", "KS_STAR")


class DivergenceError(RuntimeError):
    """An iterative imputer left its stable region; ``last`` holds the final iterate."""

    def __init__(self, message: str, last: "ImputationResult | None" = None):
        super().__init__(message)
        self.last = last


@dataclass
class ImputationResult:
    series: np.ndarray
    observed: np.ndarray
    method: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        if not np.all(np.isfinite(self.series)):
            raise FloatingPointError(f"{self.method}: imputed series has non-finite entries")

    @property
    def provenance(self) -> np.ndarray:
        return np.where(self.observed, "observed", "imputed")

    @property
    def imputed(self) -> np.ndarray:
        return self.series[~self.observed]

    def to_frame(self, index=None) -> pd.DataFrame:
        idx = np.arange(self.series.size) if index is None else index
        return pd.DataFrame({"date": idx, "value": self.series, "provenance": self.provenance,
                             "method": self.method})


def target_on_grid(y, grid: TimeGrid | None = None, release="last") -> tuple[np.ndarray, np.ndarray]:
    """High-frequency target vector (NaN where missing) and its observation mask."""
    y = np.asarray(y, dtype=float).ravel()
    if grid is not None and y.size == grid.low_count and y.size != grid.high_count:
        return embed_low_frequency(y, grid, release)
    if grid is not None and y.size != grid.high_count:
        raise ValueError(f"target length {y.size} matches neither grid frequency")
    mask = np.isfinite(y)
    if not mask.any():
        raise ValueError("target has no observations")
    return y, mask


def _pass_through(fill: np.ndarray, y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.array(fill, dtype=float)
    out[mask] = y[mask]
    return out


def _ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef


# ---------------------------------------------------------------------------
# static TP


def impute_tp(y, factors, grid: TimeGrid | None = None, release="last",
              intercept: bool = False) -> ImputationResult:
    """Regress the observed target on the factors at its observed positions and
    fill the rest with the fitted common component."""
    y, mask = target_on_grid(y, grid, release)
    F = np.asarray(factors, dtype=float)
    F = F[:, None] if F.ndim == 1 else F
    if F.shape[0] != y.size or not np.all(np.isfinite(F)):
        raise ValueError("factors must be complete and cover every high-frequency period")
    design = np.hstack([np.ones((F.shape[0], 1)), F]) if intercept else F
    if mask.sum() <= F.shape[1]:
        raise ValueError(f"{mask.sum()} observations cannot identify {F.shape[1]} loadings")
    coef = _ols(design[mask], y[mask])
    series = _pass_through(design @ coef, y, mask)
    params = {"loadings": coef[1:] if intercept else coef, "intercept": coef[0] if intercept else 0.0}
    return ImputationResult(series, mask, "TP", params)


# ---------------------------------------------------------------------------
# Stock-Watson EM


def impute_em(panel, r: int, target: int | str = -1, max_iter: int = 500,
              tol: float = 1e-8) -> ImputationResult:
    """Alternate PC on the completed panel with refilling the target's holes.

    The target starts from its TP fill based on factors of the other
    (complete) columns; iteration stops when the largest change in a filled
    entry is below ``tol``.
    """
    X, names = _panel_array(panel)
    j = _column_index(names, target)
    y = X[:, j].copy()
    mask = np.isfinite(y)
    others = np.delete(X, j, axis=1)
    if not np.all(np.isfinite(others)):
        raise ValueError("EM imputation expects every column except the target to be complete")
    Xc = X.copy()
    Xc[:, j] = impute_tp(y, estimate_pc(others, r).factors).series
    converged = False
    change = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        est = estimate_pc(Xc, r)
        fill = est.factors @ est.loadings[j]
        change = float(np.max(np.abs(fill[~mask] - Xc[~mask, j]))) if (~mask).any() else 0.0
        Xc[~mask, j] = fill[~mask]
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("impute_em: no convergence after %d iterations (last change %.3g)", max_iter, change)
    return ImputationResult(Xc[:, j], mask, "EM", {"iterations": it, "converged": converged,
                                                   "last_change": change})


def _panel_array(panel) -> tuple[np.ndarray, list]:
    if isinstance(panel, Panel):
        return panel.filled(np.nan), list(panel.columns)
    if isinstance(panel, pd.DataFrame):
        return panel.to_numpy(dtype=float), list(panel.columns)
    X = np.asarray(panel, dtype=float)
    return X, list(range(X.shape[1]))


def _column_index(names: list, target) -> int:
    if isinstance(target, (int, np.integer)):
        return int(target) % len(names)
    return names.index(target)


# ---------------------------------------------------------------------------
# Chow-Lin


@dataclass
class ChowLinFit:
    beta: np.ndarray
    rho: float
    low_residuals: np.ndarray
    low_cov: np.ndarray
    weights: np.ndarray          # T x T_o, distributes low-frequency residuals
    positions: np.ndarray        # flat index of each low-frequency observation
    loglik: float
    intercept: bool
    high_cov: dict = field(default_factory=dict)

    def high_cov_matrix(self, n: int) -> np.ndarray:
        return ar1_cov(np.arange(n), self.rho)


def ar1_cov(positions, rho: float) -> np.ndarray:
    """Covariance of a unit-innovation AR(1) sampled at the given integer positions."""
    pos = np.asarray(positions)
    lag = np.abs(pos[:, None] - pos[None, :])
    return _ar1_powers(rho, lag) / (1.0 - rho ** 2)


def _ar1_powers(rho: float, lag: np.ndarray) -> np.ndarray:
    """``rho ** lag`` for a non-negative integer lag array, one power per distinct lag."""
    return (rho ** np.arange(lag.max(initial=0) + 1))[lag]


def _design(Z, n: int, intercept: bool) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    Z = Z.reshape(n, -1) if Z.size else np.zeros((n, 0))
    if not np.all(np.isfinite(Z)):
        raise ValueError("high-frequency regressors must be complete")
    return np.hstack([np.ones((n, 1)), Z]) if intercept else Z


def _chow_lin_profile(rho: float, yl: np.ndarray, ZL: np.ndarray, pos: np.ndarray):
    VL = ar1_cov(pos, rho)
    cf = linalg.cho_factor(VL)
    Vz = linalg.cho_solve(cf, ZL)
    A = ZL.T @ Vz
    if np.linalg.cond(A) > 1e14:
        raise np.linalg.LinAlgError("Z_L' V_L^-1 Z_L is singular")
    beta = np.linalg.solve(A, Vz.T @ yl)
    u = yl - ZL @ beta
    n = yl.size
    sigma2 = u @ linalg.cho_solve(cf, u) / n
    logdet = 2 * np.log(np.diag(cf[0])).sum()
    return -0.5 * n * np.log(sigma2) - 0.5 * logdet, beta, u, VL


def _chow_lin_profile_grid(yl: np.ndarray, ZL: np.ndarray, pos: np.ndarray):
    """Return a function giving the profiled log-likelihood at many rho at once.

    An AR(1) sampled at increasing positions is still Markov: the step over a
    gap of d periods has coefficient rho**d and innovation variance
    (1 - rho**(2d)) / (1 - rho**2).  The whitened cross-product matrix of
    ``[Z_L, y_L]`` therefore depends on the data only through lag-0 and lag-1
    outer products summed per distinct gap, which are formed once; each rho
    then costs O(K^2) regardless of the sample length.
    """
    design = np.column_stack([ZL, yl])
    k = ZL.shape[1]
    n = yl.size
    gaps, which, counts = np.unique(np.diff(pos), return_inverse=True, return_counts=True)
    cur, prev = design[1:], design[:-1]
    same, cross, lagged = (np.zeros((gaps.size,) + (k + 1,) * 2) for _ in range(3))
    np.add.at(same, which, cur[:, :, None] * cur[:, None, :])
    np.add.at(cross, which, cur[:, :, None] * prev[:, None, :] + prev[:, :, None] * cur[:, None, :])
    np.add.at(lagged, which, prev[:, :, None] * prev[:, None, :])
    blocks = np.vstack([np.outer(design[0], design[0]).ravel()[None], same.reshape(gaps.size, -1),
                        cross.reshape(gaps.size, -1), lagged.reshape(gaps.size, -1)])

    def profile(rhos) -> np.ndarray:
        rhos = np.atleast_1d(np.asarray(rhos, dtype=float))[:, None]
        stat_var = 1.0 / (1.0 - rhos ** 2)
        step = rhos ** gaps
        innov_var = (1.0 - step ** 2) * stat_var
        weights = np.hstack([1 / stat_var, 1 / innov_var, -step / innov_var, step ** 2 / innov_var])
        gram = (weights @ blocks).reshape(-1, k + 1, k + 1)
        zz, zy, yy = gram[:, :k, :k], gram[:, :k, k], gram[:, k, k]
        eig = np.linalg.eigvalsh(zz)
        if np.any(eig[:, 0] <= eig[:, -1] * 1e-14):
            raise np.linalg.LinAlgError("Z_L' V_L^-1 Z_L is singular")
        beta = np.linalg.solve(zz, zy[:, :, None])[:, :, 0]
        sigma2 = (yy - np.einsum("gk,gk->g", zy, beta)) / n
        logdet = np.log(stat_var[:, 0]) + np.log(innov_var) @ counts
        return -0.5 * n * np.log(sigma2) - 0.5 * logdet

    return profile


def fit_chow_lin(y, Z, grid: TimeGrid | None = None, release="last", rho=None,
                 rho_grid=None, refine: bool = True, intercept: bool = True) -> ChowLinFit:
    """GLS bridge regression with AR(1) high-frequency errors (stock aggregation).

    ``rho`` fixes the error autocorrelation; otherwise it maximizes the
    profiled Gaussian likelihood over ``rho_grid`` (default -0.99..0.99 by
    0.01) followed by a bounded scalar refinement around the best grid point.
    """
    yh, mask = target_on_grid(y, grid, release)
    n = yh.size
    ZH = _design(Z, n, intercept)
    pos = np.flatnonzero(mask)
    if ZH.shape[1] >= pos.size:
        raise ValueError("need more low-frequency observations than regressors")
    yl, ZL = yh[pos], ZH[pos]

    profile = _chow_lin_profile_grid(yl, ZL, pos)

    def negll(p):
        return -float(profile(p)[0])

    if rho is None:
        cand = np.round(np.arange(-0.99, 0.9901, 0.01), 2) if rho_grid is None else np.asarray(rho_grid)
        vals = -profile(cand)
        best = float(cand[np.argmin(vals)])
        if refine:
            lo, hi = max(best - 0.01, -0.999), min(best + 0.01, 0.999)
            res = optimize.minimize_scalar(negll, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-8})
            if res.fun < vals.min():
                best = float(res.x)
        rho = best
    rho = float(rho)
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    ll, beta, u, VL = _chow_lin_profile(rho, yl, ZL, pos)
    cross = _ar1_powers(rho, np.abs(np.arange(n)[:, None] - pos[None, :])) / (1 - rho ** 2)
    weights = linalg.solve(VL, cross.T, assume_a="pos").T
    return ChowLinFit(beta, rho, u, VL, weights, pos, ll, intercept,
                      {"kind": "ar1", "rho": rho, "innov_var": 1.0})


def impute_chow_lin(fit: ChowLinFit, Z, y, grid: TimeGrid | None = None,
                    release="last") -> ImputationResult:
    """GLS conditional mean plus the residual distributed by the AR(1) weights."""
    yh, mask = target_on_grid(y, grid, release)
    ZH = _design(Z, yh.size, fit.intercept)
    fill = ZH @ fit.beta + fit.weights @ fit.low_residuals
    params = {"beta": fit.beta, "rho": fit.rho, "loglik": fit.loglik}
    return ImputationResult(_pass_through(fill, yh, mask), mask, "CL", params)


def chow_lin(y, Z, grid: TimeGrid | None = None, release="last", **kwargs) -> ImputationResult:
    return impute_chow_lin(fit_chow_lin(y, Z, grid, release, **kwargs), Z, y, grid, release)


# ---------------------------------------------------------------------------
# iterative TP*


@dataclass
class AdlParams:
    """``Y_s = intercept + rho Y_{s-1} + sum_l gamma[l]' F_{s-l} + error``."""

    intercept: float
    rho: float
    gamma: np.ndarray   # (lag_f + 1) x r

    def as_vector(self) -> np.ndarray:
        return np.r_[self.intercept, self.rho, self.gamma.ravel()]


def _adl_regressors(F: np.ndarray, lag_f: int) -> np.ndarray:
    """Row ``s`` holds ``(F_s, F_{s-1}, ..., F_{s-lag_f})``; rows before ``lag_f`` are NaN."""
    T, r = F.shape
    out = np.full((T, (lag_f + 1) * r), np.nan)
    for l in range(lag_f + 1):
        out[l:, l * r : (l + 1) * r] = F[: T - l]
    return out


def impute_tp_star(y, factors, grid: TimeGrid | None = None, release="last", lag_f: int = 1,
                   tol: float = 1e-8, max_iter: int = 1000, rho_sign: str | None = "positive",
                   fix_rho: float | None = None, params: AdlParams | None = None,
                   init="locf", sample: str = "all") -> ImputationResult:
    """Iterate an ADL(1, lag_f) regression of the target on the factors and refill.

    Each iteration estimates the regression on the current completed series,
    then rebuilds every missing value by running the fitted recursion forward
    from the most recent value.  ``sample="observed"`` restricts the
    regression to rows whose regressand was originally observed; with
    ``m = 2`` that variant cycles instead of converging, so it is not the
    default.  Missing values before the first observation have no lag to
    recurse from and keep the initial fill.

    ``init`` is the starting completion: ``"locf"`` (last observation carried
    forward, the default), ``"tp"`` (static TP) or an explicit array.  Static
    TP fills carry no serial correlation, so the first estimate of ``rho``
    lands near zero, an unstable fixed point of the iteration.

    ``rho_sign`` restricts the sign of the autoregressive coefficient; a
    violating estimate is replaced by a re-fit with ``rho = 0``.  ``params``
    holds all coefficients fixed, so only the recursion is run.
    """
    yh, mask = target_on_grid(y, grid, release)
    F = np.asarray(factors, dtype=float)
    F = F[:, None] if F.ndim == 1 else F
    T, r = F.shape
    if T != yh.size or not np.all(np.isfinite(F)):
        raise ValueError("factors must be complete and cover every high-frequency period")
    if rho_sign not in (None, "positive", "negative"):
        raise ValueError("rho_sign must be None, 'positive' or 'negative'")
    Freg = _adl_regressors(F, lag_f)
    first = int(np.flatnonzero(mask)[0])
    start = max(first + 1, lag_f)
    if sample not in ("all", "observed"):
        raise ValueError("sample must be 'all' or 'observed'")
    rows = np.arange(start, T) if sample == "all" else np.flatnonzero(mask)
    rows = rows[rows >= start]
    fill_pos = np.flatnonzero(~mask)
    fill_pos = fill_pos[fill_pos >= start]
    # a missing value depends only on its predecessor, so refill gap by gap
    # offset: every value k steps into its gap is updated in one vector step
    offset = np.ones(fill_pos.size, dtype=int)
    for i in range(1, fill_pos.size):
        if fill_pos[i] == fill_pos[i - 1] + 1:
            offset[i] = offset[i - 1] + 1
    waves = [fill_pos[offset == k] for k in range(1, offset.max(initial=0) + 1)]

    Y = _pass_through(_initial_fill(yh, mask, F, init), yh, mask)
    regression = _AdlRegression(Freg, rows, r) if params is None else None
    history = []
    growing = 0
    converged = False
    it = 0
    fitted = params
    for it in range(1, max_iter + 1):
        if params is None:
            fitted = regression.fit(Y, rho_sign, fix_rho)
        if abs(fitted.rho) >= 1:
            raise DivergenceError(f"estimated rho={fitted.rho:.4f} is not inside the unit circle",
                                  ImputationResult(Y, mask, "TP_STAR", {"adl": fitted, "iterations": it}))
        gam = fitted.gamma.ravel()
        base = fitted.intercept + Freg @ gam
        previous = Y[fill_pos]
        for pos in waves:
            Y[pos] = base[pos] + fitted.rho * Y[pos - 1]
        change = float(np.max(np.abs(Y[fill_pos] - previous))) if fill_pos.size else 0.0
        if history and change > history[-1]:
            growing += 1
            if growing >= 5:
                raise DivergenceError(f"TP* fill changes grew for 5 consecutive iterations (last {change:.3g})",
                                      ImputationResult(Y, mask, "TP_STAR", {"adl": fitted, "iterations": it}))
        else:
            growing = 0
        history.append(change)
        if change < tol:
            converged = True
            break
    if not converged:
        log.warning("impute_tp_star: no convergence after %d iterations", max_iter)
    out = {"adl": fitted, "intercept": fitted.intercept, "rho": fitted.rho, "gamma": fitted.gamma,
           "iterations": it, "converged": converged, "changes": np.asarray(history)}
    return ImputationResult(Y, mask, "TP_STAR", out)


def _initial_fill(y, mask, F, init) -> np.ndarray:
    if init is None or (isinstance(init, str) and init == "tp"):
        return impute_tp(y, F).series
    if isinstance(init, str) and init == "locf":
        filled = pd.Series(np.where(mask, y, np.nan)).ffill().bfill()
        return filled.to_numpy()
    if isinstance(init, str):
        raise ValueError("init must be 'tp', 'locf' or an array")
    return np.asarray(init, dtype=float)


class _AdlRegression:
    """OLS of the target on its lag and the factors over fixed rows.

    The intercept and factor columns never change between TP* iterations, so
    they are orthogonalized once; each fit then partials them out of the
    regressand and the lag (Frisch-Waugh) at the cost of a few products.
    """

    def __init__(self, Freg: np.ndarray, rows: np.ndarray, r: int):
        fixed = np.column_stack([np.ones(rows.size), Freg[rows]])
        if rows.size < fixed.shape[1] + 1:
            raise ValueError(f"{rows.size} usable observations cannot identify {fixed.shape[1] + 1} coefficients")
        q, rtri = np.linalg.qr(fixed)
        self.qt = np.ascontiguousarray(q.T)
        self.rinv = linalg.solve_triangular(rtri, np.eye(rtri.shape[0]))
        self.rows, self.r = rows, r

    def fit(self, Y, rho_sign, fix_rho) -> AdlParams:
        y, lag = Y[self.rows], Y[self.rows - 1]
        qy, qlag = self.qt @ y, self.qt @ lag
        if fix_rho is None:
            lag_sq = lag @ lag
            denom = lag_sq - qlag @ qlag
            if denom <= 1e-12 * lag_sq:
                raise np.linalg.LinAlgError("the lagged target is collinear with the factors")
            rho = float((lag @ y - qlag @ qy) / denom)
            violated = (rho_sign == "positive" and rho < 0) or (rho_sign == "negative" and rho > 0)
            fix_rho = 0.0 if violated else rho
        coef = self.rinv @ (qy - fix_rho * qlag)
        return AdlParams(float(coef[0]), float(fix_rho), coef[1:].reshape(-1, self.r))


# ---------------------------------------------------------------------------
# state-space imputation


def _split_target(panel, target):
    X, names = _panel_array(panel)
    j = _column_index(names, target)
    order = [i for i in range(X.shape[1]) if i != j] + [j]
    return X[:, order], names[j]


def impute_ks(panel, r: int, p: int = 1, target: int | str = -1, max_iter: int = 500,
              tol: float = 1e-8) -> ImputationResult:
    """EM-fitted dynamic factor model; missing target values are the smoothed common component."""
    X, _ = _split_target(panel, target)
    y = X[:, -1]
    mask = np.isfinite(y)
    fit = em_dfm(X, r, p, max_iter=max_iter, tol=tol)
    fill = smoothed_observations(fit.model, fit.smoothed)[:, -1]
    params = {"loadings": fit.model.obs_load[-1, :r], "idio_var": fit.model.obs_noise[-1],
              "iterations": fit.iterations, "converged": fit.converged, "loglik": fit.loglik_path[-1]}
    return ImputationResult(_pass_through(fill, y, mask), mask, "KS", params)


def _low_frequency_ar1(resid: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """AR(1) slope of the target residual between consecutive observations and the share observed."""
    u = resid[mask]
    share = mask.sum() / mask.size
    if u.size < 3:
        return 0.0, share
    rho, _ = ar1_coef(u[:, None])
    return float(rho[0]), share


def impute_ks_star(panel, r: int, p: int = 1, target: int | str = -1, rho_target: float | None = None,
                   rho_predictors=None, max_iter: int = 500, tol: float = 1e-8,
                   refine: bool = True, cap: float = RHO_CAP, init=None) -> ImputationResult:
    """Hybrid state-space imputation with AR(1) idiosyncratic errors.

    Predictors (all columns except the target, fully observed) are
    quasi-differenced with their residual AR(1) coefficients; the target's
    AR(1) error enters the state.  Factor loadings and dynamics come from EM
    on the joint panel.  The target's persistence is initialized from the AR(1)
    fitted between consecutive observations, mapped back to one sub-period,
    and then refined together with its loading and innovation variance by
    maximizing the filter likelihood.  ``rho_target``/``rho_predictors`` fix
    the corresponding coefficients instead.  ``init`` is an optional
    :class:`~hfimpute.factors.FactorEstimate` used to start the EM step.
    """
    X, _ = _split_target(panel, target)
    Xo, y = X[:, :-1], X[:, -1]
    mask = np.isfinite(y)
    if not np.all(np.isfinite(Xo)):
        raise ValueError("KS* needs fully observed predictors")
    No = Xo.shape[1]
    fit = em_dfm(X, r, p, max_iter=max_iter, tol=tol, init=init)
    var = fit.var if fit.var is not None else VarDynamics(np.zeros((1, r, r)), np.eye(r))
    L = fit.model.obs_load[:, :r]
    R = fit.model.obs_noise
    f = fit.smoothed.mean[:, :r]

    resid_o = Xo - f @ L[:No].T
    if rho_predictors is None:
        rho_o, _ = ar1_coef(resid_o, cap)
        innov = resid_o[1:] - rho_o * resid_o[:-1]
        s2_o = np.maximum(np.mean(innov ** 2, axis=0), IDIO_FLOOR)
    else:
        rho_o = np.broadcast_to(np.asarray(rho_predictors, float), (No,)).copy()
        s2_o = R[:No] if np.all(rho_o == 0) else np.maximum(
            np.mean((resid_o[1:] - rho_o * resid_o[:-1]) ** 2, axis=0), IDIO_FLOOR)

    lam_y = L[-1].copy()
    resid_y = np.where(mask, y - f @ lam_y, 0.0)
    if rho_target is None:
        rho_low, share = _low_frequency_ar1(resid_y, mask)
        rho_y = back_out_target_rho(min(rho_low, cap), share) if rho_low > 0 else 0.0
    else:
        rho_y = float(rho_target)
    s2_y = max(float(R[-1]) * (1 - rho_y ** 2), IDIO_FLOOR)

    def build(lam, rho, s2):
        return build_ks_star(rho_o, rho, L[:No], lam, var, s2_o, s2, X)

    n_iter = 0
    if refine:
        free_rho = rho_target is None

        def unpack(theta):
            lam = theta[:r]
            rho = theta[r] if free_rho else rho_y
            return lam, rho, np.exp(theta[-1])

        def negll(theta):
            try:
                return -kalman_filter(build(*unpack(theta)), X).loglik
            except (FloatingPointError, np.linalg.LinAlgError, ValueError):
                return np.inf

        theta0 = np.r_[lam_y, [rho_y] if free_rho else [], np.log(s2_y)]
        bounds = [(None, None)] * r + ([(-cap, cap)] if free_rho else []) + [(np.log(IDIO_FLOOR), None)]
        res = optimize.minimize(negll, theta0, method="L-BFGS-B", bounds=bounds)
        if np.isfinite(res.fun) and res.fun <= negll(theta0):
            lam_y, rho_y, s2_y = unpack(res.x)
        n_iter = int(res.nit)

    model = build(lam_y, rho_y, s2_y)
    sm = kalman_smoother(model, X)
    fill = smoothed_observations(model, sm)[:, -1]
    params = {"loadings": np.asarray(lam_y), "rho_target": float(rho_y), "target_innov_var": float(s2_y),
              "rho_predictors": rho_o, "loglik": sm.loglik, "em_iterations": fit.iterations,
              "em_converged": fit.converged, "refine_iterations": n_iter}
    return ImputationResult(_pass_through(fill, y, mask), mask, "KS_STAR", params)


# ---------------------------------------------------------------------------
# export


def results_frame(results: dict[str, ImputationResult], index=None) -> pd.DataFrame:
    """Long table stacking every method's series."""
    return pd.concat([res.to_frame(index) for res in results.values()], ignore_index=True)


def comparison_frame(results: dict[str, ImputationResult], index=None, truth=None) -> pd.DataFrame:
    """Wide table with one column per method, plus the observation flag and optional truth."""
    first = next(iter(results.values()))
    cols = {"date": np.arange(first.series.size) if index is None else index,
            "observed": first.observed}
    if truth is not None:
        cols["truth"] = np.asarray(truth, dtype=float)
    cols.update({name: res.series for name, res in results.items()})
    return pd.DataFrame(cols)


def write_results(results: dict[str, ImputationResult], out_dir, index=None, truth=None) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, res in results.items():
        path = out_dir / f"imputed_{name.lower()}.csv"
        res.to_frame(index).to_csv(path, index=False)
        paths.append(path)
    path = out_dir / "imputed_comparison.csv"
    comparison_frame(results, index, truth).to_csv(path, index=False)
    paths.append(path)
    return paths
