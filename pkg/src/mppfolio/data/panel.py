"""Dense monthly stock panels and their canonical CSV form.

Timing convention: ``returns[t]`` is realized during month ``t``, while
``features[t]`` holds information available before month ``t`` starts
(data up to ``t - 1``). A forecast for month ``t`` therefore reads only
``features[t]``.

The CSV has one row per (month, stock) pair::

    month,stock_id,return,<feature columns...>,membership,risk_free,benchmark

Missing numbers are empty fields, ``membership`` is ``1``/``0``, and the
month-level ``risk_free`` and ``benchmark`` values repeat on every row of
their month. :func:`write_panel` emits rows densely in panel order with
``repr`` floats, so ``write_panel(load_panel(f))`` is a fixed point.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

_MONTH_RE = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")
FIXED_COLUMNS = ("month", "stock_id", "return")
TRAILING_COLUMNS = ("membership", "risk_free", "benchmark")


class PanelFormatError(ValueError):
    """Malformed panel input. ``line`` is the 1-based file line when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def month_index(month: str) -> int:
    """Months since 0000-01; ``"2000-01"`` maps to 24000."""
    m = _MONTH_RE.match(month)
    if not m:
        raise ValueError(f"not an ISO YYYY-MM month: {month!r}")
    return int(m.group(1)) * 12 + int(m.group(2)) - 1


def month_label(index: int) -> str:
    y, m = divmod(index, 12)
    return f"{y:04d}-{m + 1:02d}"


def month_range(start: str, count: int) -> tuple[str, ...]:
    s = month_index(start)
    return tuple(month_label(s + k) for k in range(count))


@dataclass(frozen=True)
class PanelDataset:
    """Immutable T x n monthly panel; NaN marks missing values."""

    months: tuple[str, ...]
    stock_ids: tuple[str, ...]
    returns: NDArray[np.float64]
    features: NDArray[np.float64]
    feature_names: tuple[str, ...]
    membership: NDArray[np.bool_]
    risk_free: NDArray[np.float64]
    benchmark: NDArray[np.float64]
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        T, n, m = len(self.months), len(self.stock_ids), len(self.feature_names)
        arrays = {
            "returns": (np.asarray(self.returns, np.float64), (T, n)),
            "features": (np.asarray(self.features, np.float64), (T, n, m)),
            "membership": (np.asarray(self.membership, bool), (T, n)),
            "risk_free": (np.asarray(self.risk_free, np.float64), (T,)),
            "benchmark": (np.asarray(self.benchmark, np.float64), (T,)),
        }
        for name, (arr, shape) in arrays.items():
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "months", tuple(self.months))
        object.__setattr__(self, "stock_ids", tuple(str(s) for s in self.stock_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        idx = [month_index(mo) for mo in self.months]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("months must be strictly increasing")
        if len(set(self.stock_ids)) != n:
            raise ValueError("duplicate stock ids")
        if np.any(self.membership & ~np.isfinite(self.returns)):
            t, i = np.argwhere(self.membership & ~np.isfinite(self.returns))[0]
            raise ValueError(f"member {self.stock_ids[i]} has no return in {self.months[t]}")

    @property
    def T(self) -> int:
        return len(self.months)

    @property
    def n(self) -> int:
        return len(self.stock_ids)

    @property
    def m(self) -> int:
        return len(self.feature_names)

    def usable(self) -> NDArray[np.bool_]:
        """Stock-months that are members with a full feature vector."""
        return self.membership & np.all(np.isfinite(self.features), axis=2)

    def replace(self, **changes) -> "PanelDataset":
        kw = {f: getattr(self, f) for f in
              ("months", "stock_ids", "returns", "features", "feature_names", "membership", "risk_free", "benchmark", "meta")}
        kw.update(changes)
        return PanelDataset(**kw)


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def _parse(text: str, what: str, line: int) -> float:
    if text == "":
        return math.nan
    try:
        v = float(text)
    except ValueError:
        raise PanelFormatError(f"{what} is not a number: {text!r}", line) from None
    if not math.isfinite(v):
        raise PanelFormatError(f"{what} must be finite or empty, got {text!r}", line)
    return v


def load_panel(path: str | Path, schema: Mapping[str, str] | None = None) -> PanelDataset:
    """Read a canonical panel CSV.

    Parameters
    ----------
    path
        CSV file with the header described in the module docstring.
    schema
        Optional map from canonical column name to the file's column name,
        for files that label e.g. ``return`` as ``ret``.

    Raises
    ------
    PanelFormatError
        On a malformed row, a duplicated (month, stock) pair, months that go
        backwards, or month-level values that disagree within a month.
    """
    schema = dict(schema or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError("empty file", 1) from None
        rename = {v: k for k, v in schema.items()}
        header = [rename.get(h, h) for h in header]
        missing = [c for c in FIXED_COLUMNS + TRAILING_COLUMNS if c not in header]
        if missing:
            raise PanelFormatError(f"missing columns {missing}", 1)
        col = {h: i for i, h in enumerate(header)}
        reserved = set(FIXED_COLUMNS + TRAILING_COLUMNS)
        feature_names = tuple(h for h in header if h not in reserved)

        months: list[str] = []
        stocks: dict[str, int] = {}
        cells: dict[tuple[int, int], tuple[float, list[float], bool]] = {}
        month_vals: list[tuple[float, float]] = []
        seen: dict[tuple[int, int], int] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelFormatError(f"expected {len(header)} fields, got {len(row)}", line_no)
            month = row[col["month"]]
            try:
                month_index(month)
            except ValueError as exc:
                raise PanelFormatError(str(exc), line_no) from None
            if not months or month != months[-1]:
                if months and month_index(month) <= month_index(months[-1]):
                    raise PanelFormatError(f"month {month} out of order after {months[-1]}", line_no)
                months.append(month)
                month_vals.append((_parse(row[col["risk_free"]], "risk_free", line_no),
                                   _parse(row[col["benchmark"]], "benchmark", line_no)))
            t = len(months) - 1
            sid = row[col["stock_id"]]
            if sid == "":
                raise PanelFormatError("empty stock_id", line_no)
            i = stocks.setdefault(sid, len(stocks))
            if (t, i) in seen:
                raise PanelFormatError(f"duplicate row for ({month}, {sid}); first seen on line {seen[t, i]}", line_no)
            seen[t, i] = line_no
            rf = _parse(row[col["risk_free"]], "risk_free", line_no)
            bench = _parse(row[col["benchmark"]], "benchmark", line_no)
            if not _same(rf, month_vals[t][0]) or not _same(bench, month_vals[t][1]):
                raise PanelFormatError(f"risk_free/benchmark differ from earlier rows of {month}", line_no)
            flag = row[col["membership"]]
            if flag not in ("0", "1"):
                raise PanelFormatError(f"membership must be 0 or 1, got {flag!r}", line_no)
            ret = _parse(row[col["return"]], "return", line_no)
            if flag == "1" and math.isnan(ret):
                raise PanelFormatError(f"member {sid} has no return", line_no)
            feats = [_parse(row[col[f]], f, line_no) for f in feature_names]
            cells[t, i] = (ret, feats, flag == "1")

    T, n, m = len(months), len(stocks), len(feature_names)
    returns = np.full((T, n), np.nan)
    features = np.full((T, n, m), np.nan)
    member = np.zeros((T, n), bool)
    for (t, i), (ret, feats, flag) in cells.items():
        returns[t, i] = ret
        features[t, i] = feats
        member[t, i] = flag
    rf = np.array([v[0] for v in month_vals])
    bench = np.array([v[1] for v in month_vals])
    logger.info("loaded panel %s: T=%d n=%d m=%d", path, T, n, m)
    return PanelDataset(tuple(months), tuple(stocks), returns, features, feature_names, member, rf, bench)


def _same(a: float, b: float) -> bool:
    return (math.isnan(a) and math.isnan(b)) or a == b


def write_panel(panel: PanelDataset, path: str | Path) -> None:
    """Write the canonical dense CSV form of ``panel``."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXED_COLUMNS + panel.feature_names + TRAILING_COLUMNS)
        for t, month in enumerate(panel.months):
            rf, bench = _fmt(panel.risk_free[t]), _fmt(panel.benchmark[t])
            for i, sid in enumerate(panel.stock_ids):
                w.writerow([month, sid, _fmt(panel.returns[t, i]),
                            *(_fmt(v) for v in panel.features[t, i]),
                            "1" if panel.membership[t, i] else "0", rf, bench])


def equal_weight_benchmark(returns: NDArray[np.float64], membership: NDArray[np.bool_]) -> NDArray[np.float64]:
    """Equal-weighted member return per month (NaN for an empty month)."""
    r = np.where(membership, returns, 0.0)
    counts = membership.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, r.sum(axis=1) / counts, np.nan)


def stack_features(blocks: Sequence[NDArray[np.float64]]) -> NDArray[np.float64]:
    """Stack per-feature T x n arrays into T x n x m."""
    return np.stack(blocks, axis=2)
