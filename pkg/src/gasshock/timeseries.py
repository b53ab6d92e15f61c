"""Quarterly data model, CSV ingestion and elementary transforms."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from functools import total_ordering
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "NA"})

_QUARTER_RE = re.compile(r"^\s*(\d{4})\s*[Qq]\s*([1-4])\s*$")
_MONTH_RE = re.compile(r"^\s*(\d{4})-(\d{2})\s*$")


@total_ordering
@dataclass(frozen=True)
class QuarterIndex:
    year: int
    quarter: int

    def __post_init__(self) -> None:
        if not 1 <= self.quarter <= 4:
            raise ValueError(f"quarter must be in 1..4, got {self.quarter}")

    @classmethod
    def parse(cls, text: str) -> QuarterIndex:
        m = _QUARTER_RE.match(text)
        if m is None:
            raise ValueError(f"malformed quarterly date {text!r} (expected YYYYQn)")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def ordinal(self) -> int:
        return 4 * self.year + self.quarter - 1

    @classmethod
    def from_ordinal(cls, k: int) -> QuarterIndex:
        return cls(k // 4, k % 4 + 1)

    def __add__(self, k: int) -> QuarterIndex:
        return QuarterIndex.from_ordinal(self.ordinal + int(k))

    def __sub__(self, other: QuarterIndex | int):
        if isinstance(other, QuarterIndex):
            return self.ordinal - other.ordinal
        return self + (-int(other))

    def successor(self) -> QuarterIndex:
        return self + 1

    def __lt__(self, other: QuarterIndex) -> bool:
        return self.ordinal < other.ordinal

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"


@total_ordering
@dataclass(frozen=True)
class MonthIndex:
    year: int
    month: int

    def __post_init__(self) -> None:
        if not 1 <= self.month <= 12:
            raise ValueError(f"month must be in 1..12, got {self.month}")

    @classmethod
    def parse(cls, text: str) -> MonthIndex:
        m = _MONTH_RE.match(text)
        if m is None:
            raise ValueError(f"malformed monthly date {text!r} (expected YYYY-MM)")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def quarter(self) -> QuarterIndex:
        return QuarterIndex(self.year, (self.month - 1) // 3 + 1)

    def __lt__(self, other: MonthIndex) -> bool:
        return (self.year, self.month) < (other.year, other.month)

    def __str__(self) -> str:
        return f"{self.year}-{self.month:02d}"


def quarter_range(start: QuarterIndex, length: int) -> tuple[QuarterIndex, ...]:
    return tuple(start + k for k in range(length))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MacroDataset:
    """Aligned quarterly panel of macro series.

    ``values`` holds zeros wherever ``present`` is False; callers must consult
    the mask, never the stored number.
    """

    dates: tuple[QuarterIndex, ...]
    names: tuple[str, ...]
    values: np.ndarray
    present: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        dates = tuple(self.dates)
        names = tuple(self.names)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        present = (
            np.isfinite(values)
            if self.present is None
            else np.asarray(self.present, dtype=bool)
        )
        if values.shape != (len(dates), len(names)) or present.shape != values.shape:
            raise ValueError(
                f"values shape {values.shape} does not match {len(dates)} dates x {len(names)} names"
            )
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        for a, b in zip(dates, dates[1:]):
            if b.ordinal != a.ordinal + 1:
                raise ValueError(f"non-contiguous dates: {a} followed by {b}")
        if not np.all(np.isfinite(values[present])):
            raise ValueError("values must be finite wherever present")
        values = np.where(present, values, 0.0)
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "present", _frozen(present))

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def n(self) -> int:
        return len(self.names)

    def column(self, name: str) -> np.ndarray:
        """Series ``name`` as floats with NaN where absent."""
        j = self.index_of(name)
        return np.where(self.present[:, j], self.values[:, j], np.nan)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}; have {list(self.names)}") from None

    def select(self, names: Sequence[str]) -> MacroDataset:
        idx = [self.index_of(nm) for nm in names]
        return MacroDataset(self.dates, tuple(names), self.values[:, idx], self.present[:, idx])

    def window(self, start: QuarterIndex | None = None, end: QuarterIndex | None = None) -> MacroDataset:
        """Rows with start <= date <= end (inclusive)."""
        keep = [
            i
            for i, d in enumerate(self.dates)
            if (start is None or d >= start) and (end is None or d <= end)
        ]
        if not keep:
            raise ValueError(f"window {start}..{end} selects no observations")
        sl = slice(keep[0], keep[-1] + 1)
        return MacroDataset(self.dates[sl], self.names, self.values[sl], self.present[sl])

    def position(self, date: QuarterIndex) -> int:
        k = date.ordinal - self.dates[0].ordinal
        if not 0 <= k < self.T:
            raise ValueError(f"{date} outside {self.dates[0]}..{self.dates[-1]}")
        return k

    def equals(self, other: MacroDataset) -> bool:
        return (
            self.dates == other.dates
            and self.names == other.names
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.values, other.values)
        )


def join(datasets: Iterable[MacroDataset]) -> MacroDataset:
    """Column-bind datasets on their common date span."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to join")
    lo = max(d.dates[0] for d in datasets)
    hi = min(d.dates[-1] for d in datasets)
    if hi < lo:
        raise ValueError("datasets share no dates")
    parts = [d.window(lo, hi) for d in datasets]
    names = tuple(nm for p in parts for nm in p.names)
    return MacroDataset(
        parts[0].dates,
        names,
        np.hstack([p.values for p in parts]),
        np.hstack([p.present for p in parts]),
    )


# ---------------------------------------------------------------- schema files


def read_schema(path: str | Path) -> dict[str, str]:
    """Parse a ``key=value`` schema file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _read_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    return header, rows


def _parse_cell(cell: str, where: str) -> float | None:
    cell = cell.strip()
    if cell in MISSING_TOKENS:
        return None
    try:
        x = float(cell)
    except ValueError:
        raise ValueError(f"non-numeric cell {cell!r} at {where}") from None
    if not np.isfinite(x):
        raise ValueError(f"non-finite cell {cell!r} at {where}")
    return x


def load_macro(path: str | Path, schema: Mapping[str, str] | None = None) -> MacroDataset:
    """Read a quarterly CSV into a :class:`MacroDataset`.

    ``schema`` maps variable names to column headers; the special key ``date``
    names the date column (default ``"date"``). Without a schema every
    non-date column is loaded under its header name.
    """
    header, rows = _read_rows(path)
    schema = dict(schema or {})
    date_col = schema.pop("date", "date")
    if date_col not in header:
        raise ValueError(f"{path}: missing date column {date_col!r}")
    if not schema:
        schema = {h: h for h in header if h != date_col}
    missing = [c for c in schema.values() if c not in header]
    if missing:
        raise ValueError(f"{path}: header lacks columns {missing}")
    di = header.index(date_col)
    cols = [header.index(c) for c in schema.values()]

    parsed = []
    for r, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
        date = QuarterIndex.parse(row[di])
        cells = [_parse_cell(row[c], f"{path}:{r}:{header[c]}") for c in cols]
        parsed.append((date, cells))
    if not parsed:
        raise ValueError(f"{path}: no data rows")
    parsed.sort(key=lambda x: x[0])
    for (a, _), (b, _) in zip(parsed, parsed[1:]):
        if a == b:
            raise ValueError(f"{path}: duplicate date {a}")
    dates = tuple(d for d, _ in parsed)
    present = np.array([[c is not None for c in cells] for _, cells in parsed], dtype=bool)
    values = np.array([[0.0 if c is None else c for c in cells] for _, cells in parsed])
    return MacroDataset(dates, tuple(schema), values, present)


def format_number(x: float) -> str:
    return repr(float(x))


def save_macro(data: MacroDataset, path: str | Path) -> None:
    """Write ``data`` so that :func:`load_macro` reproduces it exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *data.names])
        for t, d in enumerate(data.dates):
            w.writerow(
                [str(d)]
                + [
                    format_number(data.values[t, j]) if data.present[t, j] else "NA"
                    for j in range(data.n)
                ]
            )


# ---------------------------------------------------------------- firm panel

DEFAULT_LABELS: dict[str, int] = {
    "strong increase": 3,
    "medium increase": 2,
    "modest increase": 1,
    "no change": 0,
    "modest decrease": -1,
    "medium decrease": -2,
    "strong decrease": -3,
}


@dataclass(frozen=True, eq=False)
class FirmPanel:
    """Firm-level survey records, one per (firm, wave).

    Categorical factors are stored as int8 codes on the -3..+3 scale with a
    separate presence mask; point forecasts likewise.
    """

    waves: tuple[QuarterIndex, ...]
    firms: tuple[str, ...]
    factors: Mapping[str, np.ndarray]
    factor_present: Mapping[str, np.ndarray]
    forecast: np.ndarray
    forecast_present: np.ndarray
    informed: np.ndarray

    def __post_init__(self) -> None:
        m = len(self.waves)
        if len(self.firms) != m:
            raise ValueError("waves and firms must have equal length")
        seen: set[tuple[str, QuarterIndex]] = set()
        for f, w in zip(self.firms, self.waves):
            if (f, w) in seen:
                raise ValueError(f"duplicate record for firm {f!r} in wave {w}")
            seen.add((f, w))
        factors = {}
        fpresent = {}
        for name, codes in self.factors.items():
            codes = np.asarray(codes, dtype=np.int8)
            mask = np.asarray(self.factor_present[name], dtype=bool)
            if codes.shape != (m,) or mask.shape != (m,):
                raise ValueError(f"factor {name!r} has wrong length")
            if np.any(np.abs(codes[mask]) > 3):
                raise ValueError(f"factor {name!r}: intensity outside -3..+3")
            factors[name] = _frozen(np.where(mask, codes, 0).astype(np.int8))
            fpresent[name] = _frozen(mask)
        object.__setattr__(self, "waves", tuple(self.waves))
        object.__setattr__(self, "firms", tuple(self.firms))
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "factor_present", fpresent)
        fp = np.asarray(self.forecast_present, dtype=bool)
        fc = np.asarray(self.forecast, dtype=float)
        object.__setattr__(self, "forecast", _frozen(np.where(fp, fc, 0.0)))
        object.__setattr__(self, "forecast_present", _frozen(fp))
        object.__setattr__(self, "informed", _frozen(np.asarray(self.informed, dtype=bool)))

    def __len__(self) -> int:
        return len(self.waves)

    def wave_dates(self) -> tuple[QuarterIndex, ...]:
        return tuple(sorted(set(self.waves)))

    def only_informed(self) -> FirmPanel:
        keep = np.flatnonzero(self.informed)
        return FirmPanel(
            tuple(self.waves[i] for i in keep),
            tuple(self.firms[i] for i in keep),
            {k: v[keep] for k, v in self.factors.items()},
            {k: v[keep] for k, v in self.factor_present.items()},
            self.forecast[keep],
            self.forecast_present[keep],
            self.informed[keep],
        )


def parse_intensity(raw: str, labels: Mapping[str, int]) -> int | None:
    """Map a categorical response to the signed -3..+3 scale (None if blank)."""
    text = " ".join(raw.strip().lower().split())
    if text in MISSING_TOKENS or text == "na":
        return None
    if text in labels:
        return int(labels[text])
    try:
        code = int(text)
    except ValueError:
        raise ValueError(f"unknown intensity code {raw!r}") from None
    if not -3 <= code <= 3:
        raise ValueError(f"intensity {code} outside the -3..+3 scale")
    return code


_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


def load_firm_panel(path: str | Path, schema: Mapping[str, str] | None = None) -> FirmPanel:
    """Read firm-level survey records.

    Schema keys: ``wave``, ``firm``, ``forecast``, ``informed`` (column
    headers), ``factor.<name>=<column>`` for each categorical factor, and
    optional ``label.<spelling>=<code>`` entries that extend the default
    label map. Without ``factor.*`` keys, every column not otherwise
    claimed is treated as a factor.
    """
    schema = dict(schema or {})
    header, rows = _read_rows(path)
    labels = dict(DEFAULT_LABELS)
    for k, v in schema.items():
        if k.startswith("label."):
            code = int(v)
            if not -3 <= code <= 3:
                raise ValueError(f"label {k!r} maps outside -3..+3")
            labels[" ".join(k[6:].lower().split())] = code
    wave_col = schema.get("wave", "wave")
    firm_col = schema.get("firm", "firm")
    fc_col = schema.get("forecast", "forecast")
    inf_col = schema.get("informed", "informed")
    for c in (wave_col, firm_col):
        if c not in header:
            raise ValueError(f"{path}: missing column {c!r}")
    factor_cols = {k[7:]: v for k, v in schema.items() if k.startswith("factor.")}
    if not factor_cols:
        claimed = {wave_col, firm_col, fc_col, inf_col}
        factor_cols = {h: h for h in header if h not in claimed}
    for c in factor_cols.values():
        if c not in header:
            raise ValueError(f"{path}: missing factor column {c!r}")

    col = {h: i for i, h in enumerate(header)}
    waves, firms, informed = [], [], []
    fc, fcp = [], []
    codes: dict[str, list[int]] = {k: [] for k in factor_cols}
    cpres: dict[str, list[bool]] = {k: [] for k in factor_cols}
    for r, row in enumerate(rows, 2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
        waves.append(QuarterIndex.parse(row[col[wave_col]]))
        firms.append(row[col[firm_col]].strip())
        for name, c in factor_cols.items():
            try:
                v = parse_intensity(row[col[c]], labels)
            except ValueError as exc:
                raise ValueError(f"{path}:{r}:{c}: {exc}") from None
            codes[name].append(0 if v is None else v)
            cpres[name].append(v is not None)
        if fc_col in col:
            x = _parse_cell(row[col[fc_col]], f"{path}:{r}:{fc_col}")
            fc.append(0.0 if x is None else x)
            fcp.append(x is not None)
        else:
            fc.append(0.0)
            fcp.append(False)
        if inf_col in col:
            flag = row[col[inf_col]].strip().lower()
            if flag in _TRUE:
                informed.append(True)
            elif flag in _FALSE or flag == "":
                informed.append(False)
            else:
                raise ValueError(f"{path}:{r}: bad informed flag {flag!r}")
        else:
            informed.append(True)
    return FirmPanel(
        tuple(waves),
        tuple(firms),
        {k: np.array(v, dtype=np.int8) for k, v in codes.items()},
        {k: np.array(v, dtype=bool) for k, v in cpres.items()},
        np.array(fc, dtype=float),
        np.array(fcp, dtype=bool),
        np.array(informed, dtype=bool),
    )


# ---------------------------------------------------------------- transforms


def yoy_change(series: Sequence[float] | np.ndarray) -> np.ndarray:
    """Year-on-year percent change of a quarterly level series.

    The first four entries are NaN (no year-ago observation).
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 5:
        raise ValueError("yoy_change needs a 1-D series with at least 5 observations")
    finite = np.isfinite(x)
    if np.any(x[finite] <= 0):
        raise ValueError("yoy_change requires strictly positive levels")
    out = np.full_like(x, np.nan)
    out[4:] = 100.0 * (x[4:] / x[:-4] - 1.0)
    return out


@dataclass(frozen=True, eq=False)
class Series:
    """A univariate series on a monthly or quarterly date index."""

    dates: tuple[MonthIndex, ...] | tuple[QuarterIndex, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.dates),):
            raise ValueError("dates and values must have equal length")
        kinds = {type(d) for d in self.dates}
        if len(kinds) > 1:
            raise ValueError("mixed monthly and quarterly dates")
        if list(self.dates) != sorted(self.dates) or len(set(self.dates)) != len(self.dates):
            raise ValueError("dates must be strictly increasing")
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "values", _frozen(values))

    @property
    def is_quarterly(self) -> bool:
        return bool(self.dates) and isinstance(self.dates[0], QuarterIndex)


def align_last_month(series: Series) -> Series:
    """Keep the March/June/September/December observation of each quarter.

    Every quarter touched by the monthly index must contain its final month;
    quarterly input is returned unchanged.
    """
    if series.is_quarterly or not series.dates:
        return series
    by_month = dict(zip(series.dates, series.values))
    quarters = sorted({d.quarter for d in series.dates})
    values = []
    for q in quarters:
        last = MonthIndex(q.year, 3 * q.quarter)
        if last not in by_month:
            raise ValueError(f"missing final-month observation {last} for {q}")
        values.append(by_month[last])
    return Series(tuple(quarters), np.array(values))


def load_monthly(path: str | Path, column: str, date_col: str = "date") -> Series:
    header, rows = _read_rows(path)
    if date_col not in header or column not in header:
        raise ValueError(f"{path}: needs columns {date_col!r} and {column!r}")
    di, ci = header.index(date_col), header.index(column)
    pairs = []
    for r, row in enumerate(rows, 2):
        x = _parse_cell(row[ci], f"{path}:{r}:{column}")
        if x is None:
            continue
        text = row[di].strip()
        d = QuarterIndex.parse(text) if _QUARTER_RE.match(text) else MonthIndex.parse(text)
        pairs.append((d, x))
    pairs.sort(key=lambda p: p[0])
    return Series(tuple(d for d, _ in pairs), np.array([x for _, x in pairs]))
