"""
Time indexing, aggregation, masking and standardization for mixed-frequency panels.

A low-frequency period ``t`` (month, quarter) is split into ``m_t`` high-frequency
sub-periods (weeks, months).  High-frequency positions are addressed either by a
flat zero-based index ``s`` in ``[0, T)`` or by the pair ``(t, j)`` with ``j`` in
``[1, m_t]``.  Low-frequency values are released in the last sub-period unless a
different release position is requested.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy import sparse


@dataclass(frozen=True)
class TimeGrid:
    """Mapping between ``T_o`` low-frequency periods and ``T = sum(m_t)`` sub-periods.

    Parameters
    ----------
    sub_counts : array of int, shape (T_o,)
        Number of sub-periods in each low-frequency period, all >= 1.
    labels : array of datetime64, shape (T,), optional
        Calendar tag of every high-frequency position.
    low_labels : array of datetime64, shape (T_o,), optional
        Calendar tag of every low-frequency period.
    """

    sub_counts: np.ndarray
    labels: np.ndarray | None = None
    low_labels: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.sub_counts, dtype=int).ravel()
        if counts.size == 0:
            raise ValueError("grid must contain at least one low-frequency period")
        if np.any(counts < 1):
            raise ValueError("every sub-period count must be >= 1")
        counts.setflags(write=False)
        object.__setattr__(self, "sub_counts", counts)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype="datetime64[D]")
            if labels.shape != (int(counts.sum()),):
                raise ValueError("labels must have one entry per high-frequency position")
            object.__setattr__(self, "labels", labels)
        if self.low_labels is not None:
            low = np.asarray(self.low_labels, dtype="datetime64[D]")
            if low.shape != counts.shape:
                raise ValueError("low_labels must have one entry per low-frequency period")
            object.__setattr__(self, "low_labels", low)

    @property
    def low_count(self) -> int:
        return int(self.sub_counts.size)

    @property
    def high_count(self) -> int:
        return int(self.sub_counts.sum())

    @property
    def starts(self) -> np.ndarray:
        """Flat index of the first sub-period of each low-frequency period."""
        return np.concatenate(([0], np.cumsum(self.sub_counts)[:-1]))

    @property
    def period_index(self) -> np.ndarray:
        """Low-frequency period (0-based) of every high-frequency position."""
        return np.repeat(np.arange(self.low_count), self.sub_counts)

    @property
    def sub_index(self) -> np.ndarray:
        """Sub-period number ``j`` (1-based) of every high-frequency position."""
        return np.arange(self.high_count) - np.repeat(self.starts, self.sub_counts) + 1

    def to_flat(self, t: int, j: int) -> int:
        """Flat index of sub-period ``j`` (1-based) of low period ``t`` (0-based)."""
        if not 0 <= t < self.low_count:
            raise IndexError(f"low period {t} outside [0, {self.low_count})")
        if not 1 <= j <= self.sub_counts[t]:
            raise IndexError(f"sub-period {j} outside [1, {self.sub_counts[t]}]")
        return int(self.starts[t] + j - 1)

    def from_flat(self, s: int) -> tuple[int, int]:
        if not 0 <= s < self.high_count:
            raise IndexError(f"flat index {s} outside [0, {self.high_count})")
        t = int(np.searchsorted(np.cumsum(self.sub_counts), s, side="right"))
        return t, int(s - self.starts[t] + 1)

    def release_positions(self, release: int | str = "last") -> np.ndarray:
        """Flat index at which each low-frequency value is observed.

        ``release="last"`` uses sub-period ``m_t``; an integer ``j`` uses
        sub-period ``min(j, m_t)``.
        """
        if release == "last":
            return self.starts + self.sub_counts - 1
        j = int(release)
        if j < 1:
            raise ValueError("release sub-period must be >= 1")
        return self.starts + np.minimum(j, self.sub_counts) - 1


def fixed_grid(m: int, n_low: int, start: str | None = None, freq: str = "MS") -> TimeGrid:
    """Grid with a constant number ``m`` of sub-periods per low period.

    When ``start`` is given, high-frequency positions are labelled with
    ``pandas.date_range(start, periods=m * n_low, freq=freq)``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if n_low < 1:
        raise ValueError("number of low-frequency periods must be >= 1")
    labels = low = None
    if start is not None:
        idx = pd.date_range(start, periods=m * n_low, freq=freq)
        labels = idx.values.astype("datetime64[D]")
        low = labels[m - 1 :: m]
    return TimeGrid(np.full(n_low, m), labels, low)


def weekly_mondays(start, end) -> TimeGrid:
    """Weekly grid of the Mondays in ``[start, end]`` grouped by calendar month.

    Both endpoints are inclusive.  A Monday belongs to the month containing its
    date, so every full month has 4 or 5 sub-periods.
    """
    start = pd.Timestamp(start)
    end = pd.Timestamp(end)
    mondays = pd.date_range(start, end, freq="W-MON")
    if len(mondays) == 0:
        raise ValueError(f"no Mondays between {start.date()} and {end.date()}")
    months = mondays.to_period("M")
    # consecutive runs of equal months; mondays are sorted so runs are contiguous
    change = np.r_[True, months[1:] != months[:-1]]
    starts = np.flatnonzero(change)
    counts = np.diff(np.r_[starts, len(mondays)])
    labels = mondays.values.astype("datetime64[D]")
    low = months[starts].to_timestamp().values.astype("datetime64[D]")
    return TimeGrid(counts, labels, low)


def build_time_grid(spec) -> TimeGrid:
    """Build a grid from a spec string or mapping.

    Accepted forms::

        "fixed:3:40"                       m=3, T_o=40
        "fixed:3:40:1978-01-01"            same, labelled monthly from 1978-01
        "weekly:1990-01-01:2019-12-31"     Mondays grouped by month
        {"kind": "fixed", "m": 3, "n_low": 40, "start": "1978-01-01"}
        {"kind": "weekly", "start": "...", "end": "..."}
    """
    if isinstance(spec, TimeGrid):
        return spec
    if isinstance(spec, str):
        kind, *rest = spec.split(":")
        if kind == "fixed":
            if len(rest) not in (2, 3):
                raise ValueError(f"bad fixed grid spec {spec!r}; use fixed:m:T_o[:start]")
            spec = {"kind": "fixed", "m": int(rest[0]), "n_low": int(rest[1])}
            if len(rest) == 3:
                spec["start"] = rest[2]
        elif kind == "weekly":
            if len(rest) != 2:
                raise ValueError(f"bad weekly grid spec {spec!r}; use weekly:start:end")
            spec = {"kind": "weekly", "start": rest[0], "end": rest[1]}
        else:
            raise ValueError(f"unknown grid kind {kind!r}")
    kind = spec.get("kind")
    if kind == "fixed":
        return fixed_grid(int(spec["m"]), int(spec["n_low"]), spec.get("start"), spec.get("freq", "MS"))
    if kind == "weekly":
        return weekly_mondays(spec["start"], spec["end"])
    raise ValueError(f"unknown grid kind {kind!r}")


def mondays_per_year(grid: TimeGrid) -> dict[int, int]:
    if grid.labels is None:
        raise ValueError("grid carries no calendar labels")
    years = grid.labels.astype("datetime64[Y]").astype(int) + 1970
    uniq, counts = np.unique(years, return_counts=True)
    return dict(zip(uniq.tolist(), counts.tolist()))


@dataclass(frozen=True)
class AggregationMap:
    """Low-from-high mapping ``y_low = C @ y_high``; ``matrix`` is ``T_o x T`` sparse."""

    matrix: sparse.csr_matrix
    kind: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, y_high: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(y_high, dtype=float)

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_aggregation(grid: TimeGrid, kind: str = "stock", average: bool = False,
                      release: int | str = "last") -> AggregationMap:
    """Aggregation matrix ``C`` for stock (point selection) or flow (sum/mean) series."""
    n_low, n_high = grid.low_count, grid.high_count
    if kind == "stock":
        cols = grid.release_positions(release)
        rows = np.arange(n_low)
        vals = np.ones(n_low)
    elif kind == "flow":
        cols = np.arange(n_high)
        rows = grid.period_index
        vals = 1.0 / np.repeat(grid.sub_counts, grid.sub_counts) if average else np.ones(n_high)
    else:
        raise ValueError(f"aggregation kind must be 'stock' or 'flow', got {kind!r}")
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n_low, n_high))
    return AggregationMap(mat, kind)


def selection_matrix(mask: np.ndarray) -> np.ndarray:
    """Dense stock-style selection matrix picking the observed positions of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    pos = np.flatnonzero(mask)
    C = np.zeros((pos.size, mask.size))
    C[np.arange(pos.size), pos] = 1.0
    return C


def embed_low_frequency(y_low, grid: TimeGrid, release: int | str = "last") -> tuple[np.ndarray, np.ndarray]:
    """Place low-frequency values at their release sub-period.

    Returns the high-frequency series (NaN where unobserved) and its mask.
    """
    y_low = np.asarray(y_low, dtype=float).ravel()
    if y_low.size != grid.low_count:
        raise ValueError(f"expected {grid.low_count} low-frequency values, got {y_low.size}")
    values = np.full(grid.high_count, np.nan)
    mask = np.zeros(grid.high_count, dtype=bool)
    pos = grid.release_positions(release)
    values[pos] = y_low
    mask[pos] = True
    return values, mask


def keep_months_mask(dates, months: Iterable[int]) -> np.ndarray:
    """True at dates whose calendar month is in ``months`` (1 = January)."""
    months = set(int(m) for m in months)
    if not months or not months <= set(range(1, 13)):
        raise ValueError("months must be a nonempty subset of 1..12")
    m = pd.DatetimeIndex(np.asarray(dates, dtype="datetime64[ns]")).month
    return np.isin(m, sorted(months))


@dataclass(frozen=True)
class Panel:
    """``T x N`` high-frequency panel with an observation mask.

    The mask is the source of truth; unobserved cells hold NaN.  ``means`` and
    ``scales`` record the moments removed by :func:`standardize` (zeros and
    ones for raw data).
    """

    values: np.ndarray
    mask: np.ndarray
    columns: tuple[str, ...]
    index: np.ndarray | None = None
    means: np.ndarray | None = None
    scales: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        mask = np.array(self.mask, dtype=bool).reshape(values.shape)
        values[~mask] = np.nan
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed entries must be finite")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        cols = tuple(str(c) for c in self.columns)
        if len(cols) != values.shape[1]:
            raise ValueError("one column name per column required")
        object.__setattr__(self, "columns", cols)
        n = values.shape[1]
        object.__setattr__(self, "means", np.zeros(n) if self.means is None else np.asarray(self.means, float))
        object.__setattr__(self, "scales", np.ones(n) if self.scales is None else np.asarray(self.scales, float))
        if self.index is not None:
            idx = np.asarray(self.index, dtype="datetime64[D]")
            if idx.shape != (values.shape[0],):
                raise ValueError("index must have one entry per row")
            object.__setattr__(self, "index", idx)

    @classmethod
    def from_array(cls, values, columns: Sequence[str] | None = None, index=None) -> "Panel":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if columns is None:
            columns = [f"x{i}" for i in range(values.shape[1])]
        return cls(values, np.isfinite(values), tuple(columns), index)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Panel":
        index = None
        if isinstance(frame.index, pd.DatetimeIndex):
            index = frame.index.values.astype("datetime64[D]")
        return cls.from_array(frame.to_numpy(dtype=float), list(frame.columns), index)

    def to_frame(self) -> pd.DataFrame:
        index = pd.DatetimeIndex(self.index) if self.index is not None else None
        return pd.DataFrame(self.values, columns=list(self.columns), index=index)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, names: Sequence[str]) -> "Panel":
        idx = [self.columns.index(n) for n in names]
        return Panel(self.values[:, idx], self.mask[:, idx], tuple(names), self.index,
                     self.means[idx], self.scales[idx])

    def drop(self, names: Sequence[str]) -> "Panel":
        return self.select([c for c in self.columns if c not in set(names)])

    def with_mask(self, mask: np.ndarray) -> "Panel":
        mask = np.asarray(mask, dtype=bool) & self.mask
        return replace(self, mask=mask)

    def filled(self, value: float = 0.0) -> np.ndarray:
        out = self.values.copy()
        out[~self.mask] = value
        return out


def standardize(panel: Panel) -> Panel:
    """Demean and scale each column using its observed entries only (ddof=1)."""
    vals = panel.values
    means = np.empty(vals.shape[1])
    scales = np.empty(vals.shape[1])
    for i in range(vals.shape[1]):
        obs = vals[panel.mask[:, i], i]
        if obs.size < 2:
            raise ValueError(f"column {panel.columns[i]!r} has fewer than 2 observed entries")
        sd = obs.std(ddof=1)
        if not sd > 0:
            raise ValueError(f"column {panel.columns[i]!r} is constant")
        means[i] = obs.mean()
        scales[i] = sd
    out = (vals - means) / scales
    # compose with any earlier standardization so that unstandardize is a full inverse
    return Panel(out, panel.mask, panel.columns, panel.index,
                 panel.means + panel.scales * means, panel.scales * scales)


def unstandardize(panel: Panel) -> Panel:
    vals = panel.values * panel.scales + panel.means
    return Panel(vals, panel.mask, panel.columns, panel.index)


def read_panel_csv(path) -> Panel:
    """CSV with an ISO-8601 date in the first column; empty cells are missing."""
    frame = pd.read_csv(path, index_col=0, parse_dates=[0], float_precision="round_trip")
    if not isinstance(frame.index, pd.DatetimeIndex):
        raise ValueError(f"{path}: first column must hold ISO-8601 dates")
    return Panel.from_frame(frame.astype(float))


def write_panel_csv(panel: Panel, path) -> None:
    frame = panel.to_frame()
    frame.index.name = "date"
    frame.to_csv(path, float_format="%.17g")
