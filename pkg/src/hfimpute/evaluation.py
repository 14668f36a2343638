"""
Counterfactual masking experiments: hide part of a fully observed target,
impute it with several methods and score the imputations on the hidden entries.

Mean squared error is the headline score, but imputation is not prediction: a
method can have low MSE while flattening the series, so bias and the ratio of
imputed to true standard deviation are reported alongside it.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .factors import VarDynamics, estimate_pc
from .grid import Panel, keep_months_mask
from .imputers import (ImputationResult, chow_lin, impute_em, impute_ks, impute_ks_star, impute_tp,
                       impute_tp_star)
from .simulation import simulate_errors, simulate_factors, DgpSpec

log = logging.getLogger(__name__)

ALL_METHODS = ("TP", "EM", "CL", "TP_STAR", "KS", "KS_STAR")


@dataclass
class CounterfactualSpec:
    """Which column to hide, how, and which methods to run.

    ``keep`` is either a list of calendar months to keep (needs a datetime
    index), the string ``"last"`` together with ``period`` (keep every
    ``period``-th value, the last of each block), or a boolean array.
    """

    target: str | int = -1
    keep: object = (2, 5, 8, 11)
    period: int = 3
    methods: tuple = ("TP", "CL", "TP_STAR", "KS_STAR")
    breaks: tuple | None = None
    r: int = 1
    p: int = 1
    lag_f: int = 1
    rho_sign: str | None = "positive"
    tp_star_init: str = "locf"
    em_tol: float = 1e-6
    em_max_iter: int = 500
    method_options: dict = field(default_factory=dict)

    def keep_mask(self, index) -> np.ndarray:
        n = len(index)
        if isinstance(self.keep, str):
            if self.keep != "last":
                raise ValueError(f"unknown keep pattern {self.keep!r}")
            mask = (np.arange(n) % self.period) == self.period - 1
        elif np.asarray(self.keep).dtype == bool:
            mask = np.asarray(self.keep, dtype=bool)
            if mask.size != n:
                raise ValueError("custom keep mask has the wrong length")
        else:
            if not isinstance(index, pd.DatetimeIndex):
                raise ValueError("month-based keep patterns need a datetime index")
            mask = keep_months_mask(index, self.keep)
        if not mask.any():
            raise ValueError("keep pattern removes every observation")
        return mask


def _frame(panel) -> pd.DataFrame:
    if isinstance(panel, Panel):
        return panel.to_frame()
    if isinstance(panel, pd.DataFrame):
        return panel
    return pd.DataFrame(np.asarray(panel, dtype=float))


def run_method(method: str, X_pred: np.ndarray, y: np.ndarray, spec: CounterfactualSpec,
               factors: np.ndarray) -> ImputationResult:
    key = method.upper().replace("-", "_")
    opts = dict(spec.method_options.get(key, {}))
    joint = np.column_stack([X_pred, y])
    if key == "TP":
        return impute_tp(y, factors, **opts)
    if key == "CL":
        return chow_lin(y, factors, **opts)
    if key == "TP_STAR":
        opts.setdefault("lag_f", spec.lag_f)
        opts.setdefault("rho_sign", spec.rho_sign)
        opts.setdefault("init", spec.tp_star_init)
        return impute_tp_star(y, factors, **opts)
    if key == "EM":
        return impute_em(joint, spec.r, **opts)
    if key == "KS":
        opts.setdefault("tol", spec.em_tol)
        opts.setdefault("max_iter", spec.em_max_iter)
        return impute_ks(joint, spec.r, spec.p, **opts)
    if key == "KS_STAR":
        opts.setdefault("tol", spec.em_tol)
        opts.setdefault("max_iter", spec.em_max_iter)
        return impute_ks_star(joint, spec.r, spec.p, **opts)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(ALL_METHODS)}")


@dataclass
class CounterfactualResult:
    results: dict
    scores: pd.DataFrame
    truth: np.ndarray
    masked: np.ndarray
    errors: dict
    index: object = None

    def mse_table(self) -> pd.DataFrame:
        """Window rows, one MSE column per method."""
        return self.scores.pivot(index=["window", "start", "end"], columns="method",
                                 values="mse").reset_index()


def run_counterfactual(panel, spec: CounterfactualSpec, threads: int = 1) -> CounterfactualResult:
    """Hide target entries per ``spec``, impute with each method, and score on the hidden entries.

    Predictor factors for TP, CL and TP* are principal components of the
    non-target columns, which must be complete.  A failing method is logged
    and recorded in ``errors``; the others still run.
    """
    df = _frame(panel)
    names = list(df.columns)
    j = spec.target % len(names) if isinstance(spec.target, (int, np.integer)) else names.index(spec.target)
    truth = df.iloc[:, j].to_numpy(dtype=float)
    if not np.all(np.isfinite(truth)):
        raise ValueError("counterfactual target must be fully observed")
    X_pred = df.drop(columns=df.columns[j]).to_numpy(dtype=float)
    if not np.all(np.isfinite(X_pred)):
        raise ValueError("predictor columns must be complete; pre-complete them first")
    keep = spec.keep_mask(df.index)
    y = np.where(keep, truth, np.nan)
    factors = estimate_pc(X_pred, spec.r).factors

    def job(method):
        try:
            return method, run_method(method, X_pred, y, spec, factors), None
        except Exception as exc:  # noqa: BLE001 - one method failing must not stop the others
            log.warning("counterfactual: %s failed: %s", method, exc)
            return method, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, spec.methods))
    else:
        outcomes = [job(m) for m in spec.methods]
    results = {m: res for m, res, err in outcomes if res is not None}
    errors = {m: err for m, res, err in outcomes if err is not None}

    masked = ~keep
    breaks = spec.breaks if spec.breaks is not None else decade_breaks(df.index)
    tables = []
    for m, res in results.items():
        t = mse_subsamples(truth, res.series, masked, breaks, df.index)
        t.insert(0, "method", m)
        tables.append(t)
    scores = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
    return CounterfactualResult(results, scores, truth, masked, errors, df.index)


def decade_breaks(index) -> list:
    """Start of every calendar decade inside a datetime index; empty for other indexes."""
    if not isinstance(index, pd.DatetimeIndex) or len(index) == 0:
        return []
    first = (index[0].year // 10 + 1) * 10
    return [pd.Timestamp(year=y, month=1, day=1) for y in range(first, index[-1].year + 1, 10)]


def mse_subsamples(truth, imputed, masked, breaks=(), index=None) -> pd.DataFrame:
    """Scores over masked entries, per window between consecutive breaks, plus the full sample.

    ``breaks`` are window start points in the units of ``index`` (integer
    positions when ``index`` is None).  Each row reports the count of masked
    entries, MSE, bias (mean of imputed minus truth) and the ratio of imputed
    to true standard deviation.  Windows without masked entries are kept with
    ``empty=True`` and NaN scores.
    """
    truth = np.asarray(truth, dtype=float)
    imputed = np.asarray(imputed, dtype=float)
    masked = np.asarray(masked, dtype=bool)
    n = truth.size
    idx = pd.RangeIndex(n) if index is None else pd.Index(index)
    cuts = sorted(set(int(np.searchsorted(idx, b)) for b in breaks) - {0, n})
    edges = [0] + [c for c in cuts if 0 < c < n] + [n]

    def score(sel, name, lo, hi):
        t, e = truth[sel], imputed[sel]
        row = {"window": name, "start": idx[lo], "end": idx[hi - 1], "count": int(sel.sum())}
        if row["count"] == 0:
            return {**row, "mse": np.nan, "bias": np.nan, "sd_ratio": np.nan, "empty": True}
        sd_t = t.std(ddof=1) if t.size > 1 else np.nan
        sd_ratio = e.std(ddof=1) / sd_t if t.size > 1 and sd_t > 0 else np.nan
        return {**row, "mse": float(np.mean((e - t) ** 2)), "bias": float(np.mean(e - t)),
                "sd_ratio": float(sd_ratio), "empty": False}

    rows = []
    for w, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        sel = np.zeros(n, dtype=bool)
        sel[lo:hi] = masked[lo:hi]
        rows.append(score(sel, f"w{w + 1}", lo, hi))
    rows.append(score(masked, "full", 0, n))
    out = pd.DataFrame(rows)
    if out["empty"].any():
        log.info("mse_subsamples: %d window(s) contain no masked entries", int(out["empty"].sum()))
    return out


# ---------------------------------------------------------------------------
# synthetic experiment


def synthetic_counterfactual_panel(T: int = 504, n_predictors: int = 20, r: int = 1, rho_target: float = 0.85,
                                   target_common_share: float = 0.5, factor_ar: float = 0.8,
                                   seed: int = 0, start: str = "1978-01-01") -> pd.DataFrame:
    """Monthly panel of ``n_predictors`` standardized series plus a standardized target.

    The target is a factor component plus an AR(``rho_target``) idiosyncratic
    error; ``target_common_share`` is the share of its variance explained by
    the factors.  Predictors carry i.i.d. idiosyncratic noise with varied
    signal-to-noise ratios.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    a = np.full(r, factor_ar)
    var = VarDynamics(np.diag(a)[None], np.diag(1 - a ** 2))
    N = n_predictors + 1
    L = rng.normal(size=(N, r))
    L /= np.linalg.norm(L, axis=1, keepdims=True)
    common = rng.uniform(0.3, 0.8, size=N)
    common[-1] = target_common_share
    L *= np.sqrt(common)[:, None]
    rho = np.zeros(N)
    rho[-1] = rho_target
    spec = DgpSpec(L, 1 - common, rho, var, T, label="synthetic-counterfactual")
    F = simulate_factors(spec, rng, T)
    e = simulate_errors(spec.idio_var, spec.idio_ar, T, rng)
    X = F @ L.T + e
    X = (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)
    cols = [f"x{i:02d}" for i in range(n_predictors)] + ["target"]
    return pd.DataFrame(X, columns=cols, index=pd.date_range(start, periods=T, freq="MS"))
