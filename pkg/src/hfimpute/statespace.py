"""
Linear Gaussian state-space models with missing observations.

Observation and transition equations::

    x_t     = c_t + Z a_t + eps_t,       eps_t ~ N(0, diag(h))
    a_{t+1} = T a_t + eta_t,             eta_t ~ N(0, Q)
    a_0     ~ N(init_mean, init_cov)

Rows of ``x_t`` that are missing (NaN, or NaN intercept) are dropped from the
update at that period, which is the same as giving them zero Kalman gain.
Because ``h`` is diagonal, the measurement update is carried out in
information form and costs ``O(n k^2 + k^3)`` per period.

Builders cover the plain factor model and three treatments of AR(1)
idiosyncratic errors: quasi-differencing every series (method A), one extra
state per series (method B), and the hybrid that quasi-differences the fully
observed predictors while carrying the target's error as a state (KS*).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg

from .factors import (IDIO_FLOOR, FactorEstimate, VarDynamics, ar1_coef, estimate_pc, fit_var,
                      normalize)
from .grid import Panel

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
DIFFUSE_SCALE = 1e6
TIGHT_RATIO = 1e-4
LOG_2PI = np.log(2 * np.pi)


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateSpaceModel:
    """Time-invariant system with optional per-period intercepts.

    ``intercept`` is ``T x N``; a NaN entry marks that series as unavailable at
    that period.  ``first_load``/``first_noise`` replace the observation
    loading and noise at ``t = 0`` (used for the Prais-Winsten first row of
    quasi-differenced series).  ``layout`` names each state slot, e.g.
    ``("factor", 0, j)`` for factor ``j`` at lag 0 or ``("error", 0, i)``.
    """

    obs_load: np.ndarray
    obs_noise: np.ndarray
    trans: np.ndarray
    trans_cov: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray
    layout: tuple = ()
    intercept: np.ndarray | None = None
    first_load: np.ndarray | None = None
    first_noise: np.ndarray | None = None

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.obs_load, dtype=float))
        N, k = Z.shape
        h = np.asarray(self.obs_noise, dtype=float).reshape(N)
        T = np.asarray(self.trans, dtype=float).reshape(k, k)
        Q = np.asarray(self.trans_cov, dtype=float).reshape(k, k)
        if np.any(h <= 0):
            raise ValueError("observation noise variances must be positive")
        if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) < -1e-10 * max(1.0, np.abs(Q).max()):
            raise ValueError("transition covariance must be positive semidefinite")
        object.__setattr__(self, "obs_load", Z)
        object.__setattr__(self, "obs_noise", h)
        object.__setattr__(self, "trans", T)
        object.__setattr__(self, "trans_cov", 0.5 * (Q + Q.T))
        object.__setattr__(self, "init_mean", np.asarray(self.init_mean, dtype=float).reshape(k))
        object.__setattr__(self, "init_cov", np.asarray(self.init_cov, dtype=float).reshape(k, k))
        if self.layout and len(self.layout) != k:
            raise ValueError("layout must name every state slot exactly once")
        if self.layout and len(set(self.layout)) != k:
            raise ValueError("layout must name every state slot exactly once")
        if self.intercept is not None:
            c = np.asarray(self.intercept, dtype=float)
            if c.ndim != 2 or c.shape[1] != N:
                raise ValueError("intercept must be T x N")
            object.__setattr__(self, "intercept", c)
        if self.first_load is not None:
            object.__setattr__(self, "first_load", np.asarray(self.first_load, dtype=float).reshape(N, k))
            object.__setattr__(self, "first_noise", np.asarray(self.first_noise, dtype=float).reshape(N))

    @property
    def n_obs(self) -> int:
        return self.obs_load.shape[0]

    @property
    def n_states(self) -> int:
        return self.obs_load.shape[1]

    def slots(self, kind: str, lag: int | None = None) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.layout)
                         if s[0] == kind and (lag is None or s[1] == lag)], dtype=int)

    def to_dict(self) -> dict:
        out = {
            "obs_load": self.obs_load.tolist(), "obs_noise": self.obs_noise.tolist(),
            "trans": self.trans.tolist(), "trans_cov": self.trans_cov.tolist(),
            "init_mean": self.init_mean.tolist(), "init_cov": self.init_cov.tolist(),
            "layout": [list(s) for s in self.layout],
        }
        if self.intercept is not None:
            out["intercept"] = [[None if np.isnan(v) else v for v in row] for row in self.intercept.tolist()]
        if self.first_load is not None:
            out["first_load"] = self.first_load.tolist()
            out["first_noise"] = self.first_noise.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceModel":
        intercept = None
        if d.get("intercept") is not None:
            intercept = np.array([[np.nan if v is None else v for v in row] for row in d["intercept"]], float)
        return cls(np.asarray(d["obs_load"]), np.asarray(d["obs_noise"]), np.asarray(d["trans"]),
                   np.asarray(d["trans_cov"]), np.asarray(d["init_mean"]), np.asarray(d["init_cov"]),
                   tuple(tuple(s) for s in d.get("layout", [])), intercept,
                   None if d.get("first_load") is None else np.asarray(d["first_load"]),
                   None if d.get("first_noise") is None else np.asarray(d["first_noise"]))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def restore(cls, path) -> "StateSpaceModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FilterOutput:
    pred_mean: np.ndarray       # T x k, a_{t|t-1}
    pred_cov: np.ndarray        # T x k x k
    filt_mean: np.ndarray       # T x k, a_{t|t}
    filt_cov: np.ndarray
    loglik: float
    loglik_t: np.ndarray        # per-period contributions


@dataclass
class SmootherOutput:
    mean: np.ndarray            # T x k, a_{t|T}
    cov: np.ndarray             # T x k x k
    lag_cov: np.ndarray         # T x k x k; entry t is Cov(a_t, a_{t-1} | all), zero at t=0
    filtered: FilterOutput

    @property
    def loglik(self) -> float:
        return self.filtered.loglik


def _data_array(data) -> np.ndarray:
    if isinstance(data, Panel):
        return data.filled(np.nan)
    arr = np.asarray(data, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def initial_state(trans: np.ndarray, trans_cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unconditional moments if the transition is stable, else a diffuse proxy."""
    k = trans.shape[0]
    if k and np.max(np.abs(np.linalg.eigvals(trans))) < 1 - 1e-10:
        P0 = linalg.solve_discrete_lyapunov(trans, trans_cov)
        return np.zeros(k), 0.5 * (P0 + P0.T)
    return np.zeros(k), DIFFUSE_SCALE * np.eye(k)


def _joint_update(a, P, Z, h, y, eye, t):
    """Measurement update in information form for a block with diagonal noise."""
    v = y - Z @ a
    Zh = Z / h[:, None]
    G = Z.T @ Zh
    g = Zh.T @ v
    M = eye + P @ G
    Pf = np.linalg.solve(M, P)
    Pf = 0.5 * (Pf + Pf.T)
    sign, logdet_m = np.linalg.slogdet(M)
    if not (sign > 0 and np.isfinite(logdet_m)):
        raise FloatingPointError(f"non-finite innovation covariance at period {t}")
    quad = v @ (v / h) - g @ Pf @ g
    ll = -0.5 * (h.size * LOG_2PI + np.log(h).sum() + logdet_m + quad)
    return a + Pf @ g, Pf, ll


def _scalar_update(a, P, z, h, y, t):
    Pz = P @ z
    f = z @ Pz + h
    if not (np.isfinite(f) and f > 0):
        raise FloatingPointError(f"non-finite innovation variance at period {t}")
    v = y - z @ a
    gain = Pz / f
    P = P - np.outer(gain, Pz)
    return a + gain * v, 0.5 * (P + P.T), -0.5 * (LOG_2PI + np.log(f) + v * v / f)


def kalman_filter(model: StateSpaceModel, data) -> FilterOutput:
    """Kalman filter that skips missing rows; ``data`` is ``T x N`` with NaN or a Panel."""
    X = _data_array(data)
    Tn, N = X.shape
    if N != model.n_obs:
        raise ValueError(f"data has {N} series, model expects {model.n_obs}")
    k = model.n_states
    avail = np.isfinite(X)
    if model.intercept is not None:
        if model.intercept.shape[0] != Tn:
            raise ValueError("intercept length does not match data")
        avail &= np.isfinite(model.intercept)
        resid_base = X - model.intercept
    else:
        resid_base = X

    Tm, Q = model.trans, model.trans_cov
    a = model.init_mean.copy()
    P = model.init_cov.copy()
    pm = np.empty((Tn, k))
    pc = np.empty((Tn, k, k))
    fm = np.empty((Tn, k))
    fc = np.empty((Tn, k, k))
    ll = np.zeros(Tn)
    eye = np.eye(k)

    for t in range(Tn):
        pm[t] = a
        pc[t] = P
        obs = avail[t]
        if obs.any():
            if t == 0 and model.first_load is not None:
                Z, h = model.first_load[obs], model.first_noise[obs]
            else:
                Z, h = model.obs_load[obs], model.obs_noise[obs]
            v = resid_base[t, obs]
            # rows far more precise than the prior are updated one at a time
            prior_var = np.einsum("ij,jk,ik->i", Z, P, Z)
            tight = h < TIGHT_RATIO * prior_var
            if not tight.all():
                loose = ~tight
                a, P, ll[t] = _joint_update(a, P, Z[loose], h[loose], v[loose], eye, t)
            for i in np.flatnonzero(tight):
                a, P, lli = _scalar_update(a, P, Z[i], h[i], v[i], t)
                ll[t] += lli
            if np.any(np.diag(P) < 0):
                w, V = np.linalg.eigh(P)
                P = (V * np.maximum(w, 0.0)) @ V.T
        fm[t] = a
        fc[t] = P
        a = Tm @ a
        P = Tm @ P @ Tm.T + Q
        P = 0.5 * (P + P.T)
    return FilterOutput(pm, pc, fm, fc, float(ll.sum()), ll)


def kalman_smoother(model: StateSpaceModel, data) -> SmootherOutput:
    """Fixed-interval (Rauch-Tung-Striebel) smoother with lag-one covariances."""
    f = kalman_filter(model, data)
    Tn, k = f.filt_mean.shape
    Tm = model.trans
    ms = f.filt_mean.copy()
    Ps = f.filt_cov.copy()
    lag = np.zeros((Tn, k, k))
    for t in range(Tn - 2, -1, -1):
        Pp = f.pred_cov[t + 1]
        TP = Tm @ f.filt_cov[t]
        try:
            J = np.linalg.solve(Pp, TP).T
        except np.linalg.LinAlgError:
            J = (np.linalg.pinv(Pp) @ TP).T
        ms[t] = f.filt_mean[t] + J @ (ms[t + 1] - f.pred_mean[t + 1])
        Pt = f.filt_cov[t] + J @ (Ps[t + 1] - Pp) @ J.T
        Ps[t] = 0.5 * (Pt + Pt.T)
        lag[t + 1] = Ps[t + 1] @ J.T
    return SmootherOutput(ms, Ps, lag, f)


# ---------------------------------------------------------------------------
# model builders


def _factor_layout(r: int, lags: int) -> tuple:
    return tuple(("factor", l, j) for l in range(lags) for j in range(r))


def factor_model(loadings, idio_var, var: VarDynamics | None = None, factor_cov=None) -> StateSpaceModel:
    """Factor model with VAR(p) factors in companion form.

    With ``var=None`` the factors are serially independent with covariance
    ``factor_cov`` (identity by default).
    """
    L = np.atleast_2d(np.asarray(loadings, dtype=float))
    N, r = L.shape
    if var is None:
        S = np.eye(r) if factor_cov is None else np.atleast_2d(factor_cov)
        var = VarDynamics(np.zeros((1, r, r)), S)
    Tm, Q = var.companion()
    k = Tm.shape[0]
    Z = np.zeros((N, k))
    Z[:, :r] = L
    a0, P0 = initial_state(Tm, Q)
    return StateSpaceModel(Z, np.maximum(np.asarray(idio_var, float), NOISE_FLOOR), Tm, Q, a0, P0,
                           _factor_layout(r, k // r))


def _lagged_factor_transition(var: VarDynamics) -> tuple[np.ndarray, np.ndarray, int]:
    """Transition for the stacked state ``(f_t, f_{t-1})`` (VAR order <= 2)."""
    if var.order > 2:
        raise ValueError("quasi-differenced models carry (f_t, f_{t-1}); VAR order must be <= 2")
    r = var.dim
    Tm = np.zeros((2 * r, 2 * r))
    Tm[:r, : r * var.order] = np.hstack(list(var.coefs))
    Tm[r:, :r] = np.eye(r)
    Q = np.zeros_like(Tm)
    Q[:r, :r] = var.innov_cov
    return Tm, Q, r


def _check_complete(X: np.ndarray, cols=None) -> None:
    sub = X if cols is None else X[:, cols]
    if not np.all(np.isfinite(sub)):
        raise ValueError("quasi-differenced series must be fully observed")


def build_method_a(loadings, innov_var, var: VarDynamics, rho, data,
                   first_period: str = "prais-winsten") -> StateSpaceModel:
    """Quasi-difference every series: ``x_t = rho x_{t-1} + (L, -rho L)(f_t, f_{t-1}) + e_t``.

    ``first_period="prais-winsten"`` keeps ``x_0`` with loading ``(L, 0)`` and
    variance ``innov_var / (1 - rho^2)``; ``"drop"`` discards it for series
    with ``rho != 0``.
    """
    L = np.atleast_2d(np.asarray(loadings, dtype=float))
    N, r = L.shape
    X = _data_array(data)
    _check_complete(X)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (N,))
    s2 = np.asarray(innov_var, dtype=float).reshape(N)
    Tm, Q, _ = _lagged_factor_transition(var)
    Z = np.hstack([L, -rho[:, None] * L])
    c = np.empty_like(X)
    c[1:] = rho * X[:-1]
    first_load = first_noise = None
    if first_period == "prais-winsten":
        c[0] = 0.0
        first_load = np.hstack([L, np.zeros_like(L)])
        first_noise = s2 / (1 - rho ** 2)
    elif first_period == "drop":
        c[0] = np.where(rho == 0, 0.0, np.nan)
    else:
        raise ValueError(f"unknown first_period {first_period!r}")
    a0, P0 = initial_state(Tm, Q)
    return StateSpaceModel(Z, np.maximum(s2, NOISE_FLOOR), Tm, Q, a0, P0, _factor_layout(r, 2),
                           c, first_load, None if first_noise is None else np.maximum(first_noise, NOISE_FLOOR))


def build_method_b(loadings, innov_var, var: VarDynamics, rho, xi_var=None) -> StateSpaceModel:
    """One AR(1) error state per series: ``x_t = L f_t + e~_t + xi_t``, ``e~_t = rho e~_{t-1} + e_t``."""
    L = np.atleast_2d(np.asarray(loadings, dtype=float))
    N, r = L.shape
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (N,))
    s2 = np.asarray(innov_var, dtype=float).reshape(N)
    xi = np.full(N, NOISE_FLOOR) if xi_var is None else np.maximum(np.broadcast_to(xi_var, (N,)), NOISE_FLOOR)
    Tf, Qf = var.companion()
    kf = Tf.shape[0]
    k = kf + N
    Tm = np.zeros((k, k))
    Tm[:kf, :kf] = Tf
    Tm[kf:, kf:] = np.diag(rho)
    Q = np.zeros((k, k))
    Q[:kf, :kf] = Qf
    Q[kf:, kf:] = np.diag(s2)
    Z = np.zeros((N, k))
    Z[:, :r] = L
    Z[:, kf:] = np.eye(N)
    a0, P0 = initial_state(Tm, Q)
    layout = _factor_layout(r, kf // r) + tuple(("error", 0, i) for i in range(N))
    return StateSpaceModel(Z, xi, Tm, Q, a0, P0, layout)


def build_ks_star(rho_observed, rho_target: float, loadings, target_loading, var: VarDynamics,
                  innov_var, target_innov_var: float, data, xi_var: float | None = None,
                  first_period: str = "prais-winsten") -> StateSpaceModel:
    """Hybrid system: quasi-differenced predictors plus one AR(1) error state for the target.

    ``data`` is ``T x (N_o + 1)`` with the target in the last column; the
    predictors must be fully observed, the target may be missing anywhere.
    State is ``(f_t, f_{t-1}, e~_Y,t)`` of dimension ``2r + 1``.
    """
    L = np.atleast_2d(np.asarray(loadings, dtype=float))
    No, r = L.shape
    X = _data_array(data)
    if X.shape[1] != No + 1:
        raise ValueError(f"data must have {No + 1} columns (predictors then target)")
    _check_complete(X, slice(0, No))
    rho_o = np.broadcast_to(np.asarray(rho_observed, dtype=float), (No,))
    s2 = np.asarray(innov_var, dtype=float).reshape(No)
    lam_y = np.asarray(target_loading, dtype=float).reshape(r)

    Tf, Qf, _ = _lagged_factor_transition(var)
    k = 2 * r + 1
    Tm = np.zeros((k, k))
    Tm[: 2 * r, : 2 * r] = Tf
    Tm[-1, -1] = rho_target
    Q = np.zeros((k, k))
    Q[: 2 * r, : 2 * r] = Qf
    Q[-1, -1] = target_innov_var

    Z = np.zeros((No + 1, k))
    Z[:No, :r] = L
    Z[:No, r : 2 * r] = -rho_o[:, None] * L
    Z[No, :r] = lam_y
    Z[No, -1] = 1.0
    xi = NOISE_FLOOR if xi_var is None else max(float(xi_var), NOISE_FLOOR)
    h = np.r_[np.maximum(s2, NOISE_FLOOR), xi]

    c = np.zeros_like(X)
    c[1:, :No] = rho_o * X[:-1, :No]
    first_load = first_noise = None
    if first_period == "prais-winsten":
        first_load = Z.copy()
        first_load[:No, r : 2 * r] = 0.0
        first_noise = h.copy()
        first_noise[:No] = np.maximum(s2 / (1 - rho_o ** 2), NOISE_FLOOR)
    elif first_period == "drop":
        c[0, :No] = np.where(rho_o == 0, 0.0, np.nan)
    else:
        raise ValueError(f"unknown first_period {first_period!r}")
    a0, P0 = initial_state(Tm, Q)
    layout = _factor_layout(r, 2) + (("error", 0, No),)
    return StateSpaceModel(Z, h, Tm, Q, a0, P0, layout, c, first_load, first_noise)


def back_out_target_rho(rho_hat: float, share_observed: float) -> float:
    """Per-sub-period AR(1) coefficient from persistence measured between releases.

    If the target's error is observed once every ``m`` sub-periods its
    low-frequency persistence is ``rho ** m``.  With ``share_observed = 1/m``
    the per-sub-period coefficient is ``rho_hat ** share_observed``.
    """
    if not 0 < rho_hat < 1:
        raise ValueError("rho_hat must lie in (0, 1)")
    if not 0 < share_observed <= 1:
        raise ValueError("share_observed must lie in (0, 1]")
    return float(rho_hat ** share_observed)


def skip_sampled_rho(rho: float, share_observed: float) -> float:
    """Inverse of :func:`back_out_target_rho`: persistence between observed points."""
    return float(rho ** (1.0 / share_observed))


# ---------------------------------------------------------------------------
# EM estimation of the factor model with missing data


@dataclass
class DfmFit:
    model: StateSpaceModel
    estimate: FactorEstimate
    smoothed: SmootherOutput
    loglik_path: np.ndarray
    iterations: int
    converged: bool
    var: VarDynamics | None = None


def _pc_with_missing(X: np.ndarray, r: int, n_iter: int = 50, tol: float = 1e-6):
    """PC on a panel with holes: fill with zeros, then refill with the common component."""
    miss = ~np.isfinite(X)
    Xf = np.where(miss, 0.0, X)
    est = estimate_pc(Xf, r)
    for _ in range(n_iter if miss.any() else 0):
        fill = est.common_component()[miss]
        change = np.max(np.abs(fill - Xf[miss])) if fill.size else 0.0
        Xf[miss] = fill
        est = estimate_pc(Xf, r)
        if change < tol:
            break
    return est, Xf


def em_dfm(data, r: int, p: int = 1, max_iter: int = 500, tol: float = 1e-8,
           floor: float = IDIO_FLOOR, init: FactorEstimate | None = None) -> DfmFit:
    """EM estimation of a dynamic factor model on a panel that may have holes.

    Initialization is PC on the panel completed by iterated PC refills, with a
    VAR(p) on those factors.  Factor innovations are normalized to identity
    covariance, which fixes the scale of the factors.  The distribution of the
    first state is held at its initial value so that every iteration is an
    exact EM step; the log likelihood is therefore non-decreasing and a
    decrease larger than ``1e-8`` (relative) raises
    :class:`ConvergenceError`.  ``p = 0`` fits the static model with identity
    factor covariance.
    """
    X = _data_array(data)
    Tn, N = X.shape
    if not 1 <= r < N:
        raise ValueError("need 1 <= r < N")
    if p < 0:
        raise ValueError("p must be >= 0")
    obs = np.isfinite(X)
    if np.any(obs.sum(axis=0) == 0):
        raise ValueError("every series needs at least one observation")
    X0 = np.where(obs, X, 0.0)

    if init is None:
        init, _ = _pc_with_missing(X, r)
    L = init.loadings.copy()
    F0 = init.factors
    resid = np.where(obs, X0 - F0 @ L.T, 0.0)
    R = np.maximum((resid ** 2).sum(0) / obs.sum(0), floor)
    var = None
    if p >= 1:
        # rotate so that factor innovations have identity covariance; this pins
        # down the scale that loadings and factors could otherwise trade off
        var0 = fit_var(F0, p)
        C = np.linalg.cholesky(var0.innov_cov)
        Ci = np.linalg.inv(C)
        L = L @ C
        var = VarDynamics(np.array([Ci @ A @ C for A in var0.coefs]), np.eye(r), var0.shrunk)

    def make_model(L, R, var, a0=None, P0=None):
        m = factor_model(L, R, var)
        if a0 is not None:
            m = replace(m, init_mean=a0, init_cov=P0)
        return m

    model = make_model(L, R, var)
    a0, P0 = model.init_mean, model.init_cov
    path = []
    converged = False
    sm = None
    it = 0
    for it in range(1, max_iter + 1):
        sm = kalman_smoother(model, X)
        ll = sm.loglik
        if path:
            prev = path[-1]
            if ll < prev - 1e-8 * max(1.0, abs(prev)):
                raise ConvergenceError(
                    f"EM log likelihood decreased at iteration {it}: {prev:.10g} -> {ll:.10g}")
            if abs(ll - prev) < tol * max(1.0, abs(prev)):
                path.append(ll)
                converged = True
                break
        path.append(ll)

        Ef = sm.mean[:, :r]
        Vf = sm.cov[:, :r, :r]
        Sff = Vf + Ef[:, :, None] * Ef[:, None, :]
        # loadings: per-series regression over observed periods
        A = np.einsum("ti,tjk->ijk", obs.astype(float), Sff)
        b = (X0.T @ Ef)
        L = np.linalg.solve(A, b[:, :, None])[:, :, 0]
        fit = Ef @ L.T
        quad = np.einsum("ij,tjk,ik->ti", L, Vf, L)
        R = np.where(obs, (X0 - fit) ** 2 + quad, 0.0).sum(0) / obs.sum(0)
        R = np.maximum(R, floor)
        if p >= 1:
            a = sm.mean
            Saa = sm.cov + a[:, :, None] * a[:, None, :]
            S_cur_lag = (sm.lag_cov[1:] + a[1:, :, None] * a[:-1, None, :]).sum(0)[:r]   # r x k
            S_lag = Saa[:-1].sum(0)                                                       # k x k
            Arow = np.linalg.solve(S_lag, S_cur_lag.T).T                                  # r x k
            var = VarDynamics(Arow.reshape(r, p, r).transpose(1, 0, 2), np.eye(r))
        model = make_model(L, R, var, a0, P0)
    else:
        sm = kalman_smoother(model, X)
        path.append(sm.loglik)
        log.warning("em_dfm: no convergence after %d iterations", max_iter)

    # the returned model starts from the stationary distribution of the fitted dynamics
    model = make_model(L, R, var)
    sm = kalman_smoother(model, X)
    Fs = sm.mean[:, :r]
    F, Ln, G = normalize(Fs, L)
    est = FactorEstimate(F, Ln, R, G.T @ (np.cov(Fs.T, bias=True).reshape(r, r)) @ G, "EM_DFM",
                         diagnostics={"loglik_path": np.asarray(path), "iterations": it,
                                      "converged": converged,
                                      "heywood": np.flatnonzero(R <= floor * (1 + 1e-12))})
    return DfmFit(model, est, sm, np.asarray(path), it, converged, var)


def smoothed_observations(model: StateSpaceModel, sm: SmootherOutput, data=None) -> np.ndarray:
    """``c_t + Z a_{t|T}`` for every series and period (NaN where the intercept is unknown)."""
    out = sm.mean @ model.obs_load.T
    if model.first_load is not None:
        out[0] = model.first_load @ sm.mean[0]
    if model.intercept is not None:
        out = out + np.where(np.isfinite(model.intercept), model.intercept, np.nan)
    return out


def ar1_residual_params(resid: np.ndarray, cap: float = 0.99) -> tuple[np.ndarray, np.ndarray]:
    """AR(1) coefficients and innovation variances of complete residual columns."""
    rho, _ = ar1_coef(resid, cap)
    innov = resid[1:] - rho * resid[:-1]
    return rho, np.maximum(np.mean(innov ** 2, axis=0), IDIO_FLOOR)


def smoothed_states_frame(sm: SmootherOutput, model: StateSpaceModel, index=None) -> pd.DataFrame:
    names = ["_".join(str(p) for p in s) for s in model.layout] or [f"a{i}" for i in range(sm.mean.shape[1])]
    return pd.DataFrame(sm.mean, columns=names, index=index)
