"""
Command-line front end.

    hfimpute [--config run.json] [--output-dir DIR] <command> [options]

Commands: ``grid``, ``calibrate``, ``simulate``, ``impute``, ``counterfactual``.
Every option can also be given in the JSON config under the same name with
dashes replaced by underscores; flags on the command line win.  Outputs go to
``--output-dir``, else ``$HFIMPUTE_OUTPUT_DIR``, else ``./hfimpute-out``.
Each run writes ``manifest.json`` listing every artifact with its SHA-256.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import evaluation, imputers, simulation
from .factors import estimate_pc
from .grid import Panel, TimeGrid, build_time_grid, fixed_grid, mondays_per_year, standardize

log = logging.getLogger("hfimpute")

OUTPUT_ENV = "HFIMPUTE_OUTPUT_DIR"
DETREND_KINDS = ("none", "linear", "quadratic", "log-diff")
METHOD_ALIASES = {"tp": "TP", "em": "EM", "cl": "CL", "chow-lin": "CL", "tp-star": "TP_STAR",
                  "tp_star": "TP_STAR", "ks": "KS", "ks-star": "KS_STAR", "ks_star": "KS_STAR"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# data preparation


def _detrend_column(x: np.ndarray, kind: str, name: str) -> np.ndarray:
    obs = np.isfinite(x)
    if kind == "none":
        return x
    first, last = np.flatnonzero(obs)[[0, -1]]
    if not obs[first : last + 1].all():
        log.warning("column %s has missing interior values; detrending uses observed entries only", name)
    if kind == "log-diff":
        if np.any(x[obs] <= 0):
            raise ValueError(f"column {name!r}: log-diff needs strictly positive values")
        out = np.full_like(x, np.nan)
        out[1:] = np.diff(np.log(x))
        return out
    degree = {"linear": 1, "quadratic": 2}[kind]
    t = np.arange(x.size, dtype=float)
    t_scaled = (t - t.mean()) / max(t.std(), 1.0)
    coef = np.polynomial.polynomial.polyfit(t_scaled[obs], x[obs], degree)
    return x - np.polynomial.polynomial.polyval(t_scaled, coef)


def prepare_panel(raw, detrend="none", lag_expand: int = 0, keep_undetrended=()) -> Panel:
    """Detrend columns and append lagged copies.

    ``raw`` is a CSV path or a DataFrame with a date index.  ``detrend`` is one
    kind for every column or a mapping ``column -> kind`` (unlisted columns
    are left alone).  ``lag_expand = L`` appends ``L`` lagged copies of each
    column named ``<col>_lag<l>``; their first ``l`` rows are missing.
    """
    if isinstance(raw, (str, Path)):
        try:
            frame = pd.read_csv(raw, index_col=0, parse_dates=[0], float_precision="round_trip")
            frame = frame.apply(pd.to_numeric, errors="raise")
        except (ValueError, TypeError) as exc:
            raise ValueError(f"{raw}: could not parse panel CSV ({exc})") from exc
        if not isinstance(frame.index, pd.DatetimeIndex):
            raise ValueError(f"{raw}: first column must hold dates")
    else:
        frame = raw.copy()
    if lag_expand < 0:
        raise ValueError("lag_expand must be >= 0")
    kinds = ({c: detrend for c in frame.columns} if isinstance(detrend, str)
             else {c: detrend.get(c, "none") for c in frame.columns})
    out = {}
    for col in frame.columns:
        kind = kinds[col]
        if kind not in DETREND_KINDS:
            raise ValueError(f"column {col!r}: unknown detrend {kind!r}; choose from {', '.join(DETREND_KINDS)}")
        x = frame[col].to_numpy(dtype=float)
        out[col] = x if col in keep_undetrended else _detrend_column(x, kind, col)
    base = pd.DataFrame(out, index=frame.index)
    parts = [base] + [base.shift(l).add_suffix(f"_lag{l}") for l in range(1, lag_expand + 1)]
    return Panel.from_frame(pd.concat(parts, axis=1))


def precomplete_predictors(panel: Panel, r: int, exclude=()) -> Panel:
    """Fill holes in predictor columns by TP on factors from the fully observed columns.

    Columns listed in ``exclude`` (typically the target) are passed through
    untouched.  Observed entries are never modified.
    """
    exclude = set(exclude)
    cols = [c for c in panel.columns if c not in exclude]
    complete = [c for c in cols if panel.mask[:, panel.columns.index(c)].all()]
    incomplete = [c for c in cols if c not in complete]
    if not incomplete:
        return panel
    if not complete:
        raise ValueError("no fully observed predictor columns to estimate factors from")
    X = panel.select(complete).values
    factors = estimate_pc(X, min(r, len(complete) - 1) if len(complete) > 1 else 1).factors
    values = panel.values.copy()
    mask = panel.mask.copy()
    for c in incomplete:
        j = panel.columns.index(c)
        values[:, j] = imputers.impute_tp(values[:, j], factors).series
        mask[:, j] = True
    return Panel(values, mask, panel.columns, panel.index, panel.means, panel.scales)


def truncate_ragged_edge(panel: Panel, exclude=()) -> Panel:
    """Drop trailing rows in which any predictor is missing."""
    cols = [panel.columns.index(c) for c in panel.columns if c not in set(exclude)]
    full = panel.mask[:, cols].all(axis=1)
    if not full.any():
        raise ValueError("no row has every predictor observed")
    last = int(np.flatnonzero(full)[-1]) + 1
    idx = None if panel.index is None else panel.index[:last]
    return Panel(panel.values[:last], panel.mask[:last], panel.columns, idx, panel.means, panel.scales)


# ---------------------------------------------------------------------------
# config handling


def _split_list(value, cast=str) -> list:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(v.strip()) for v in str(value).split(",") if v.strip()]


def _methods(value) -> list[str]:
    out = []
    for m in _split_list(value):
        key = METHOD_ALIASES.get(m.lower(), m.upper().replace("-", "_"))
        if key not in imputers.METHODS:
            raise ConfigError([f"method: unknown method {m!r}"])
        out.append(key)
    return out


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    cfg = dict(defaults)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError([f"config: file {path} does not exist"])
        loaded = json.loads(path.read_text())
        unknown = set(loaded) - set(defaults) - {"command"}
        if unknown:
            raise ConfigError([f"{k}: not a recognised option" for k in sorted(unknown)])
        cfg.update(loaded)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _require_path(cfg: dict, key: str, problems: list[str]) -> None:
    if cfg.get(key) is None:
        problems.append(f"{key}: required")
    elif not Path(cfg[key]).exists():
        problems.append(f"{key}: file {cfg[key]} does not exist")


def _check_range(cfg: dict, key: str, lo, hi, problems: list[str]) -> None:
    v = cfg.get(key)
    if v is not None and not lo <= v <= hi:
        problems.append(f"{key}: {v} outside [{lo}, {hi}]")


# ---------------------------------------------------------------------------
# manifest


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pandas"):
        out[pkg] = metadata.version(pkg)
    try:
        out["hfimpute"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["hfimpute"] = "source"
    return out


def write_manifest(out_dir: Path, command: str, cfg: dict, outputs: list[Path], timings: dict) -> Path:
    entries = [{"path": str(p.relative_to(out_dir)), "sha256": _sha256(p), "bytes": p.stat().st_size}
               for p in sorted(set(outputs))]
    manifest = {"command": command, "config": cfg, "seed": cfg.get("seed"), "versions": _versions(),
                "timings_seconds": timings, "outputs": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _write_csv(frame: pd.DataFrame, path: Path, outputs: list[Path], **kw) -> None:
    frame.to_csv(path, float_format="%.17g", **kw)
    outputs.append(path)


def _write_json(obj, path: Path, outputs: list[Path]) -> None:
    path.write_text(json.dumps(obj, indent=1, default=_json_default))
    outputs.append(path)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating, np.bool_)):
        return obj.item()
    return str(obj)


# ---------------------------------------------------------------------------
# commands


def cmd_grid(cfg: dict, out: Path, outputs: list[Path]) -> None:
    grid = build_time_grid(cfg["grid"])
    labels = grid.labels if grid.labels is not None else np.arange(grid.high_count)
    frame = pd.DataFrame({"position": np.arange(grid.high_count), "label": labels,
                          "low_period": grid.period_index, "sub_period": grid.sub_index})
    _write_csv(frame, out / "grid.csv", outputs, index=False)
    counts, freq = np.unique(grid.sub_counts, return_counts=True)
    summary = {"high_count": grid.high_count, "low_count": grid.low_count,
               "sub_count_frequency": {int(c): int(f) for c, f in zip(counts, freq)}}
    if grid.labels is not None and str(cfg["grid"]).startswith("weekly"):
        per_year = mondays_per_year(grid)
        summary["mondays_per_year"] = per_year
        summary["years_with_53_mondays"] = [y for y, n in per_year.items() if n == 53]
    _write_json(summary, out / "grid_summary.json", outputs)


def cmd_calibrate(cfg: dict, out: Path, outputs: list[Path]) -> None:
    if cfg.get("synthetic"):
        spec = {"dgp1": simulation.synthetic_dgp1, "dgp2": simulation.synthetic_dgp2}[cfg["synthetic"]](cfg["seed"])
    else:
        panel = prepare_panel(cfg["input"], cfg["detrend"], 0)
        panel = truncate_ragged_edge(panel)
        partial = [c for k, c in enumerate(panel.columns) if not panel.mask[:, k].all()]
        if partial:
            log.warning("calibrate: dropping %d column(s) with missing values: %s", len(partial), ", ".join(partial))
            panel = panel.drop(partial)
        spec = simulation.calibrate_dgp(standardize(panel), cfg["r"], cfg["p"], cfg["estimator"])
    path = out / "dgp_spec.json"
    spec.save(path)
    outputs.append(path)


def _load_spec(value, seed: int) -> simulation.DgpSpec:
    if value in ("dgp1", "dgp2"):
        return {"dgp1": simulation.synthetic_dgp1, "dgp2": simulation.synthetic_dgp2}[value](seed)
    return simulation.DgpSpec.load(value)


def cmd_simulate(cfg: dict, out: Path, outputs: list[Path]) -> None:
    spec = _load_spec(cfg["spec"], 0)
    nsim = _split_list(cfg["nsim"], int) or [spec.N]
    estimators = [e.upper().replace("-", "_") for e in _split_list(cfg["estimators"])]
    reps_df = simulation.replication_table(spec, estimators, nsim, cfg["reps"], cfg["seed"], cfg["p"],
                                           cfg["threads"])
    summary = simulation.summarize_replications(reps_df)
    _write_csv(reps_df, out / "replications.csv", outputs, index=False)
    _write_csv(summary, out / "summary.csv", outputs, index=False)
    _write_csv(simulation.comparison_layout(summary, "M"), out / "table_M.csv", outputs, index=False)
    for j in range(spec.r):
        _write_csv(simulation.comparison_layout(summary, f"R2_{j + 1}"), out / f"table_R2_{j + 1}.csv",
                   outputs, index=False)


def _grid_for(value, n_high: int, index) -> TimeGrid | None:
    if not value:
        return None
    parts = str(value).split(":")
    if parts[0] == "fixed" and len(parts) == 2:
        m = int(parts[1])
        if n_high % m:
            raise ConfigError([f"grid: {n_high} rows are not a multiple of m={m}"])
        return fixed_grid(m, n_high // m)
    grid = build_time_grid(value)
    if grid.high_count != n_high:
        raise ConfigError([f"grid: {grid.high_count} sub-periods but the panel has {n_high} rows"])
    return grid


def _prepared(cfg: dict) -> tuple[Panel, str]:
    panel = prepare_panel(cfg["input"], cfg["detrend"], cfg["lag_expand"], keep_undetrended=())
    target = cfg["target"] or panel.columns[-1]
    if target not in panel.columns:
        raise ConfigError([f"target: column {target!r} not in the input"])
    if cfg["lag_expand"]:
        lagged = [c for c in panel.columns if c.startswith(f"{target}_lag")]
        panel = panel.drop(lagged)
    if cfg["ragged_edge"] == "truncate":
        panel = truncate_ragged_edge(panel, exclude=[target])
    panel = precomplete_predictors(panel, cfg["r"], exclude=[target])
    return panel, target


def _tp_star_options(cfg: dict) -> dict:
    return {"lag_f": cfg["lag_f"], "rho_sign": None if cfg["rho_sign"] == "none" else cfg["rho_sign"],
            "tol": cfg["tol"], "max_iter": cfg["max_iter"], "init": cfg["tp_star_init"]}


def cmd_impute(cfg: dict, out: Path, outputs: list[Path]) -> None:
    panel, target = _prepared(cfg)
    std = standardize(panel)
    j = std.columns.index(target)
    y_std = std.values[:, j]
    grid = _grid_for(cfg["grid"], panel.shape[0], panel.index)
    if grid is not None:
        keep = np.zeros(panel.shape[0], dtype=bool)
        keep[grid.release_positions(cfg["release"])] = True
        y_std = np.where(keep & np.isfinite(y_std), y_std, np.nan)
    X_pred = np.delete(std.values, j, axis=1)
    factors = estimate_pc(X_pred, cfg["r"]).factors
    spec = evaluation.CounterfactualSpec(r=cfg["r"], p=cfg["p"], lag_f=cfg["lag_f"],
                                         rho_sign=_tp_star_options(cfg)["rho_sign"],
                                         tp_star_init=cfg["tp_star_init"], em_tol=cfg["em_tol"],
                                         method_options={"TP_STAR": {"tol": cfg["tol"], "max_iter": cfg["max_iter"]}})
    results = {}
    failures = {}
    for m in _methods(cfg["method"]):
        try:
            res = evaluation.run_method(m, X_pred, y_std, spec, factors)
        except Exception as exc:  # noqa: BLE001 - reported per method
            failures[m] = f"{type(exc).__name__}: {exc}"
            log.error("%s failed: %s", m, exc)
            continue
        raw = res.series * std.scales[j] + std.means[j]
        raw[res.observed] = panel.values[res.observed, j]
        results[m] = imputers.ImputationResult(raw, res.observed, m, res.params)
    if not results:
        raise RuntimeError(f"every method failed: {failures}")
    index = pd.DatetimeIndex(panel.index) if panel.index is not None else None
    for path in imputers.write_results(results, out, index):
        outputs.append(path)
    params = {m: {k: v for k, v in r.params.items() if k not in ("adl", "changes")} for m, r in results.items()}
    _write_json({"target": target, "params": params, "failures": failures}, out / "impute_params.json", outputs)


def cmd_counterfactual(cfg: dict, out: Path, outputs: list[Path]) -> None:
    if cfg.get("input"):
        panel, target = _prepared(cfg)
        frame = standardize(panel).to_frame()
    else:
        frame = evaluation.synthetic_counterfactual_panel(
            T=cfg["T"], n_predictors=cfg["n_predictors"], r=cfg["r"], rho_target=cfg["rho_target"],
            seed=cfg["seed"])
        target = "target"
    keep = "last" if cfg["keep"] == "last" else _split_list(cfg["keep_months"], int)
    breaks = [pd.Timestamp(b) for b in _split_list(cfg["breaks"])] or None
    spec = evaluation.CounterfactualSpec(
        target=target, keep=keep, period=cfg["period"], methods=tuple(_methods(cfg["method"])), breaks=breaks,
        r=cfg["r"], p=cfg["p"], lag_f=cfg["lag_f"], rho_sign=_tp_star_options(cfg)["rho_sign"],
        tp_star_init=cfg["tp_star_init"], em_tol=cfg["em_tol"],
        method_options={"TP_STAR": {"tol": cfg["tol"], "max_iter": cfg["max_iter"]}})
    res = evaluation.run_counterfactual(frame, spec, threads=cfg["threads"])
    _write_csv(res.scores, out / "scores.csv", outputs, index=False)
    _write_csv(res.mse_table(), out / "mse_table.csv", outputs, index=False)
    for path in imputers.write_results(res.results, out, frame.index, truth=res.truth):
        outputs.append(path)
    _write_json({"errors": res.errors, "masked_count": int(res.masked.sum())}, out / "counterfactual.json",
                outputs)


COMMANDS = {"grid": cmd_grid, "calibrate": cmd_calibrate, "simulate": cmd_simulate, "impute": cmd_impute,
            "counterfactual": cmd_counterfactual}

DEFAULTS = {
    "grid": None, "input": None, "target": None, "synthetic": None, "spec": "dgp1",
    "r": 1, "p": 1, "lag_f": 1, "estimator": "PC", "estimators": "PC,MLE_H,PC_GLS_H,PC_GLS_HAR,PC_KS",
    "nsim": None, "reps": 10, "seed": 0, "threads": 1,
    "method": "tp,cl,tp-star,ks-star", "rho_sign": "positive", "tp_star_init": "locf", "tol": 1e-8,
    "max_iter": 1000, "em_tol": 1e-6, "release": "last", "detrend": "none", "lag_expand": 0,
    "ragged_edge": "truncate", "keep": "months", "keep_months": "2,5,8,11", "period": 3, "breaks": None,
    "T": 504, "n_predictors": 20, "rho_target": 0.85,
}


def validate(command: str, cfg: dict) -> None:
    problems: list[str] = []
    _check_range(cfg, "r", 1, 50, problems)
    _check_range(cfg, "p", 0, 2 if command in ("impute", "counterfactual") else 12, problems)
    _check_range(cfg, "lag_f", 0, 12, problems)
    _check_range(cfg, "reps", 1, 100000, problems)
    _check_range(cfg, "threads", 1, 256, problems)
    _check_range(cfg, "lag_expand", 0, 24, problems)
    _check_range(cfg, "rho_target", -0.99, 0.99, problems)
    if cfg["rho_sign"] not in ("positive", "negative", "none"):
        problems.append("rho_sign: must be positive, negative or none")
    if cfg["tp_star_init"] not in ("locf", "tp"):
        problems.append("tp_star_init: must be locf or tp")
    if cfg["ragged_edge"] not in ("truncate", "tp"):
        problems.append("ragged_edge: must be truncate or tp")
    if isinstance(cfg["detrend"], str) and cfg["detrend"] not in DETREND_KINDS:
        problems.append(f"detrend: must be one of {', '.join(DETREND_KINDS)}")
    if command == "grid" and not cfg["grid"]:
        problems.append("grid: required")
    if command == "calibrate" and not cfg.get("synthetic"):
        _require_path(cfg, "input", problems)
    if command == "calibrate" and cfg.get("synthetic") not in (None, "dgp1", "dgp2"):
        problems.append("synthetic: must be dgp1 or dgp2")
    if command == "simulate" and cfg["spec"] not in ("dgp1", "dgp2"):
        _require_path(cfg, "spec", problems)
    if command == "impute":
        _require_path(cfg, "input", problems)
    if command == "counterfactual" and cfg.get("input"):
        _require_path(cfg, "input", problems)
    if command in ("impute", "counterfactual"):
        try:
            _methods(cfg["method"])
        except ConfigError as exc:
            problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hfimpute", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="JSON file with option values")
    parser.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_ENV} or ./hfimpute-out)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="worker cap for replication loops")
        p.add_argument("--r", "--factors", dest="r", type=int, help="number of factors")
        p.add_argument("--p", "--var-order", dest="p", type=int, help="VAR order of the factors")

    def data(p):
        p.add_argument("--input", help="CSV with a date column first")
        p.add_argument("--target", help="target column (default: last column)")
        p.add_argument("--detrend", help="none, linear, quadratic or log-diff")
        p.add_argument("--lag-expand", type=int, help="append this many lags of every predictor")
        p.add_argument("--ragged-edge", choices=("truncate", "tp"))

    def methods(p):
        p.add_argument("--method", "--methods", dest="method", help="comma list: tp,em,cl,tp-star,ks,ks-star")
        p.add_argument("--lag-f", type=int, help="factor lags in the TP* regression")
        p.add_argument("--rho-sign", choices=("positive", "negative", "none"))
        p.add_argument("--tp-star-init", choices=("locf", "tp"))
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--em-tol", type=float)

    g = sub.add_parser("grid", help="build a mixed-frequency calendar")
    g.add_argument("--grid", help="fixed:m:T_o[:start] or weekly:start:end")

    c = sub.add_parser("calibrate", help="fit a simulation spec to a panel")
    common(c)
    data(c)
    c.add_argument("--estimator", choices=("PC", "MLE"))
    c.add_argument("--synthetic", choices=("dgp1", "dgp2"), help="write a shipped synthetic spec instead")

    s = sub.add_parser("simulate", help="Monte Carlo comparison of factor estimators")
    common(s)
    s.add_argument("--spec", help="DGP spec JSON, or dgp1 / dgp2")
    s.add_argument("--nsim", help="comma list of panel widths")
    s.add_argument("--reps", type=int)
    s.add_argument("--estimators", help="comma list of PC, MLE_H, PC_GLS_H, PC_GLS_HAR, PC_KS")

    i = sub.add_parser("impute", help="impute a low-frequency target on a high-frequency panel")
    common(i)
    data(i)
    methods(i)
    i.add_argument("--grid", help="fixed:m, fixed:m:T_o[:start] or weekly:start:end")
    i.add_argument("--release", help="'last' or sub-period number of the release")

    k = sub.add_parser("counterfactual", help="mask a complete target, impute, and score")
    common(k)
    data(k)
    methods(k)
    k.add_argument("--keep-months", help="calendar months to keep, e.g. 2,5,8,11")
    k.add_argument("--keep", choices=("months", "last"))
    k.add_argument("--period", type=int, help="block length for --keep last")
    k.add_argument("--breaks", help="comma list of window start dates")
    k.add_argument("--T", dest="T", type=int, help="length of the synthetic panel when no --input")
    k.add_argument("--n-predictors", type=int)
    k.add_argument("--rho-target", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merge_config(args, DEFAULTS)
        if isinstance(cfg["detrend"], str) and cfg["detrend"].startswith("{"):
            cfg["detrend"] = json.loads(cfg["detrend"])
        validate(args.command, cfg)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or "hfimpute-out")
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](cfg, out, outputs)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_manifest(out, args.command, cfg, outputs, {"total": round(time.perf_counter() - t0, 3)})
    return 0


if __name__ == "__main__":
    sys.exit(main())
