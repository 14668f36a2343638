"""
Data-generating processes for factor panels and the estimator-comparison harness.

Each replication draws from its own ``numpy.random.SeedSequence`` substream
keyed by the replication index, so results do not depend on how replications
are spread across workers.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .factors import IDIO_FLOOR, VarDynamics, ar1_coef, estimate, fit_var, gls_project, project_static
from .grid import Panel

log = logging.getLogger(__name__)

BURN_IN = 200
DEFAULT_SHARES = (0.4, 0.3, 0.3)


@dataclass(frozen=True)
class DgpSpec:
    """Static factor panel with VAR(p) factors and AR(1) idiosyncratic errors.

    ``idio_var`` is the unconditional idiosyncratic variance; the AR(1)
    innovation variance is ``idio_var * (1 - idio_ar**2)``.  Columns are
    ordered so that consecutive runs of ``block_shares * N`` columns form the
    sampling blocks.
    """

    loadings: np.ndarray
    idio_var: np.ndarray
    idio_ar: np.ndarray
    var: VarDynamics
    T: int
    block_shares: tuple = DEFAULT_SHARES
    label: str = ""

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        N = L.shape[0]
        phi = np.asarray(self.idio_var, dtype=float).reshape(N)
        rho = np.asarray(self.idio_ar, dtype=float).reshape(N)
        shares = tuple(float(s) for s in self.block_shares)
        if np.any(phi <= 0):
            raise ValueError("idiosyncratic variances must be positive")
        if np.any(np.abs(rho) >= 1):
            raise ValueError("idiosyncratic AR coefficients must lie inside (-1, 1)")
        if abs(sum(shares) - 1) > 1e-9 or min(shares) <= 0:
            raise ValueError("block shares must be positive and sum to one")
        if self.var.dim != L.shape[1]:
            raise ValueError("VAR dimension must equal the number of factors")
        if self.var.spectral_radius() >= 1:
            raise ValueError("factor VAR must be stationary")
        object.__setattr__(self, "loadings", L)
        object.__setattr__(self, "idio_var", phi)
        object.__setattr__(self, "idio_ar", rho)
        object.__setattr__(self, "block_shares", shares)

    @property
    def N(self) -> int:
        return self.loadings.shape[0]

    @property
    def r(self) -> int:
        return self.loadings.shape[1]

    def blocks(self) -> list[np.ndarray]:
        """Column indices of each block; sizes follow :func:`block_counts` applied to N."""
        edges = np.r_[0, np.cumsum(block_counts(self.N, self.block_shares))]
        return [np.arange(edges[b], edges[b + 1]) for b in range(len(self.block_shares))]

    def factor_variance_shares(self) -> np.ndarray:
        """Share of total variance attributable to each factor (factors taken as uncorrelated)."""
        fvar = np.diag(self.var.stationary_cov()[: self.r, : self.r])
        common = (self.loadings ** 2) * fvar
        total = common.sum() + self.idio_var.sum()
        return common.sum(axis=0) / total

    def to_dict(self) -> dict:
        return {"label": self.label, "T": self.T, "block_shares": list(self.block_shares),
                "loadings": self.loadings.tolist(), "idio_var": self.idio_var.tolist(),
                "idio_ar": self.idio_ar.tolist(), "var": self.var.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        return cls(np.asarray(d["loadings"]), np.asarray(d["idio_var"]), np.asarray(d["idio_ar"]),
                   VarDynamics.from_dict(d["var"]), int(d["T"]),
                   tuple(d.get("block_shares", DEFAULT_SHARES)), d.get("label", ""))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path) -> "DgpSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def block_counts(nsim: int, shares=DEFAULT_SHARES) -> np.ndarray:
    """Floor ``share * nsim`` per block, then hand out the remainder one at a time in block order."""
    shares = np.asarray(shares, dtype=float)
    if nsim < shares.size:
        raise ValueError(f"nsim={nsim} is smaller than the number of blocks ({shares.size})")
    counts = np.floor(shares * nsim + 1e-9).astype(int)
    for b in range(nsim - counts.sum()):
        counts[b % shares.size] += 1
    return counts


# ---------------------------------------------------------------------------
# synthetic reference specs


def _spread(lo: float, hi: float, n: int, mean: float | None, rng) -> np.ndarray:
    """``n`` values in ``[lo, hi]`` that include both endpoints, with an optional target mean."""
    u = np.sort(rng.uniform(size=n))
    u = (u - u[0]) / (u[-1] - u[0])
    if mean is not None:
        target = (mean - lo) / (hi - lo)
        # power transform keeps endpoints fixed while moving the mean
        lo_k, hi_k = 1e-3, 1e3
        for _ in range(200):
            k = np.sqrt(lo_k * hi_k)
            if np.mean(u ** k) > target:
                lo_k = k
            else:
                hi_k = k
        u = u ** np.sqrt(lo_k * hi_k)
    return lo + (hi - lo) * rng.permutation(u)


def synthetic_spec(N: int, r: int, T: int, factor_shares, idio_range=(0.065, 0.984),
                   ar_range=(-0.617, 0.955), factor_ar=None, seed: int = 0, label: str = "") -> DgpSpec:
    """A spec with prescribed summary statistics for a panel of unit-variance series.

    Each series has variance one; factor ``j`` accounts for ``factor_shares[j]``
    of the total variation and idiosyncratic variances span ``idio_range``.
    Squared loadings are balanced with iterative proportional fitting; the
    blocks lean on different factors so that block sampling matters.
    """
    rng = np.random.default_rng(seed)
    shares = np.asarray(factor_shares, dtype=float)[:r]
    common_total = shares.sum()
    phi = _spread(*idio_range, N, 1 - common_total, rng)
    rho = _spread(*ar_range, N, None, rng)

    base = rng.uniform(0.2, 1.0, size=(N, r))
    edges = np.r_[0, np.cumsum(block_counts(N, DEFAULT_SHARES))]
    for b in range(len(DEFAULT_SHARES)):
        base[edges[b] : edges[b + 1], b % r] *= 3.0
    row_target = 1 - phi
    col_target = shares * N
    W = base ** 2
    for _ in range(5000):
        W *= (row_target / W.sum(axis=1))[:, None]
        W *= (col_target / W.sum(axis=0))[None, :]
        if np.max(np.abs(W.sum(axis=1) - row_target)) < 1e-12:
            break
    L = np.sqrt(W) * rng.choice([-1.0, 1.0], size=(N, r))

    a = np.linspace(0.8, 0.4, r) if factor_ar is None else np.asarray(factor_ar, dtype=float)
    var = VarDynamics(np.diag(a)[None], np.diag(1 - a ** 2))
    return DgpSpec(L, phi, rho, var, T, DEFAULT_SHARES, label)


def synthetic_dgp1(seed: int = 0) -> DgpSpec:
    """Synthetic stand-in for a 122-series monthly panel: T=720, N=122, r=3."""
    return synthetic_spec(122, 3, 720, (0.147, 0.073, 0.070), seed=seed, label="synthetic-dgp1")


def synthetic_dgp2(seed: int = 0) -> DgpSpec:
    """Synthetic stand-in for a 50-series panel: T=420, N=50, r=2."""
    return synthetic_spec(50, 2, 420, (0.147, 0.073), seed=seed, label="synthetic-dgp2")


def calibrate_dgp(panel, r: int, p: int = 1, method: str = "PC", block_shares=DEFAULT_SHARES,
                  label: str = "calibrated") -> DgpSpec:
    """Fit a factor model to a complete panel and return it as a simulation spec."""
    X = panel.filled(np.nan) if isinstance(panel, Panel) else np.asarray(panel, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("calibration needs a complete panel")
    key = method.upper().replace("-", "_")
    if key == "MLE":
        key = "MLE_H"
    est = estimate(X, r, key)
    resid = X - est.common_component()
    rho, _ = ar1_coef(resid)
    phi = np.maximum(resid.var(axis=0), IDIO_FLOOR)
    var = fit_var(est.factors, p)
    return DgpSpec(est.loadings, phi, rho, var, X.shape[0], tuple(block_shares), label)


# ---------------------------------------------------------------------------
# simulation


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def simulate_factors(spec: DgpSpec, rng: np.random.Generator, T: int | None = None) -> np.ndarray:
    T = spec.T if T is None else T
    p, r = spec.var.order, spec.r
    chol = np.linalg.cholesky(spec.var.innov_cov)
    shocks = rng.standard_normal((T + BURN_IN, r)) @ chol.T
    F = np.zeros((T + BURN_IN + p, r))
    for t in range(p, T + BURN_IN + p):
        F[t] = shocks[t - p] + sum(spec.var.coefs[l] @ F[t - l - 1] for l in range(p))
    return F[-T:]


def simulate_errors(phi, rho, T: int, rng: np.random.Generator) -> np.ndarray:
    sd = np.sqrt(phi * (1 - rho ** 2))
    shocks = rng.standard_normal((T + BURN_IN, phi.size)) * sd
    e = np.zeros_like(shocks)
    e[0] = shocks[0]
    for t in range(1, e.shape[0]):
        e[t] = rho * e[t - 1] + shocks[t]
    return e[-T:]


def select_columns(spec: DgpSpec, nsim: int, rng: np.random.Generator) -> np.ndarray:
    counts = block_counts(nsim, spec.block_shares)
    cols = []
    for block, n in zip(spec.blocks(), counts):
        if n > block.size:
            raise ValueError(f"block of size {block.size} cannot supply {n} series")
        cols.append(np.sort(rng.choice(block, size=n, replace=False)))
    return np.concatenate(cols)


def simulate_panel(spec: DgpSpec, nsim: int | None = None, seed: int = 0, rep: int = 0,
                   T: int | None = None) -> tuple[Panel, np.ndarray]:
    """Draw one panel of ``nsim`` series and the true factors.

    Factors depend only on ``(seed, rep)``, so panels of different width in the
    same replication share their factor path.
    """
    nsim = spec.N if nsim is None else nsim
    if nsim > spec.N:
        raise ValueError(f"nsim={nsim} exceeds the {spec.N} series available")
    T = spec.T if T is None else T
    F = simulate_factors(spec, _stream(seed, rep, 0), T)
    rng = _stream(seed, rep, 1, nsim)
    cols = select_columns(spec, nsim, rng)
    e = simulate_errors(spec.idio_var[cols], spec.idio_ar[cols], T, rng)
    X = F @ spec.loadings[cols].T + e
    return Panel.from_array(X, columns=[f"x{c:03d}" for c in cols]), F


# ---------------------------------------------------------------------------
# metrics


def _fhat(Fhat) -> np.ndarray:
    F = np.asarray(Fhat, dtype=float)
    F = F[:, None] if F.ndim == 1 else F
    if np.linalg.matrix_rank(F) < F.shape[1]:
        raise np.linalg.LinAlgError("estimated factors are rank deficient")
    return F


def metric_trace_ratio(Ftrue, Fhat) -> float:
    """``tr(F' P F) / tr(F' F)`` with ``P`` the projection onto the columns of ``Fhat``."""
    Ft = np.asarray(Ftrue, dtype=float)
    Ft = Ft[:, None] if Ft.ndim == 1 else Ft
    Fh = _fhat(Fhat)
    if Ft.shape[0] != Fh.shape[0]:
        raise ValueError("factor matrices must have the same number of rows")
    Q, _ = np.linalg.qr(Fh)
    proj = Q.T @ Ft
    return float(np.sum(proj ** 2) / np.sum(Ft ** 2))


def metric_r2_per_factor(Ftrue_col, Fhat) -> float:
    """Uncentred R^2 of one true factor regressed on all estimated factors."""
    return metric_trace_ratio(np.asarray(Ftrue_col, dtype=float).reshape(-1, 1), Fhat)


def shrinkage_distance(X, loadings, idio_var, factor_cov) -> float:
    """``||F_projection - F_gls|| / sqrt(T)`` for given model parameters."""
    f_gls = gls_project(loadings, idio_var, X)
    f_p = project_static(loadings, idio_var, factor_cov, X)
    return float(np.linalg.norm(f_p - f_gls) / np.sqrt(np.asarray(X).shape[0]))


# ---------------------------------------------------------------------------
# Monte Carlo comparison


def _one_replication(spec: DgpSpec, estimators, nsim_grid, seed: int, rep: int, p: int) -> list[dict]:
    rows = []
    for nsim in nsim_grid:
        panel, F = simulate_panel(spec, nsim, seed, rep)
        X = panel.filled()
        for name in estimators:
            row = {"rep": rep, "nsim": nsim, "estimator": name}
            try:
                est = estimate(X, spec.r, name, p)
                row["M"] = metric_trace_ratio(F, est.factors)
                for j in range(spec.r):
                    row[f"R2_{j + 1}"] = metric_r2_per_factor(F[:, j], est.factors)
            except Exception as exc:  # noqa: BLE001 - recorded and excluded by the caller
                row["error"] = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


def replication_table(spec: DgpSpec, estimators=("PC",), nsim_grid=(10,), reps: int = 1, seed: int = 0,
                      p: int = 1, threads: int = 1) -> pd.DataFrame:
    """One row per (replication, nsim, estimator), ordered by replication index."""
    estimators = tuple(estimators)
    nsim_grid = tuple(int(n) for n in nsim_grid)
    if threads > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_one_replication, spec, estimators, nsim_grid, seed, rep, p)
                       for rep in range(reps)]
            parts = [f.result() for f in futures]
    else:
        parts = [_one_replication(spec, estimators, nsim_grid, seed, rep, p) for rep in range(reps)]
    df = pd.DataFrame([row for part in parts for row in part])
    if "error" not in df:
        df["error"] = None
    return df


def summarize_replications(df: pd.DataFrame) -> pd.DataFrame:
    """Mean metrics per (estimator, nsim) with Monte Carlo standard errors and failure counts."""
    metric_cols = ["M"] + sorted(c for c in df.columns if c.startswith("R2_"))
    ok = df[df["error"].isna()]
    grouped = ok.groupby(["estimator", "nsim"], sort=False)
    out = grouped[metric_cols].mean()
    out["M_se"] = grouped["M"].std(ddof=1) / np.sqrt(grouped["M"].count())
    out["reps"] = grouped["M"].count()
    failures = df[df["error"].notna()].groupby(["estimator", "nsim"]).size()
    out["failures"] = failures.reindex(out.index, fill_value=0).astype(int)
    return out.reset_index()


def run_estimator_comparison(spec: DgpSpec, estimators=("PC",), nsim_grid=(10,), reps: int = 1,
                             seed: int = 0, p: int = 1, threads: int = 1) -> pd.DataFrame:
    """Mean trace ratio and per-factor R^2 for every (estimator, nsim) cell."""
    return summarize_replications(replication_table(spec, estimators, nsim_grid, reps, seed, p, threads))


def comparison_layout(summary: pd.DataFrame, metric: str = "M") -> pd.DataFrame:
    """Wide table: one row per nsim, one column per estimator."""
    return summary.pivot(index="nsim", columns="estimator", values=metric).reset_index()
