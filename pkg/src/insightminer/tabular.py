"""Typed in-memory columnar dataset and the statistics primitives built on it.

Columns are immutable after construction; every derived quantity (numeric
encoding, distinct values, summary statistics) is computed lazily and cached
on the instance, which is safe because cells never change.
"""

from __future__ import annotations

import csv
import hashlib
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Iterable, Optional, Sequence

import numpy as np

Cell = Any  # float | bool | str | datetime | timedelta | None


class DataError(Exception):
    """Raised for unreadable input, schema violations and degenerate columns."""


class ColumnKind(str, Enum):
    NUMERICAL = "numerical"
    DATETIME = "datetime"
    TIMEDELTA = "timedelta"
    CATEGORICAL = "categorical"
    BOOLEAN = "boolean"


QUANTITATIVE = (ColumnKind.NUMERICAL, ColumnKind.DATETIME, ColumnKind.TIMEDELTA)
QUALITATIVE = (ColumnKind.CATEGORICAL, ColumnKind.BOOLEAN)


def is_quantitative(kind: ColumnKind) -> bool:
    return kind in QUANTITATIVE


def is_qualitative(kind: ColumnKind) -> bool:
    return kind in QUALITATIVE


# ---------------------------------------------------------------------------
# Duration literals
# ---------------------------------------------------------------------------

# Fixed-length calendar units: months are 30 days, years 365 days.
_DURATION_UNITS = (
    ("year", 365 * 86400),
    ("month", 30 * 86400),
    ("week", 7 * 86400),
    ("day", 86400),
    ("hour", 3600),
    ("minute", 60),
    ("second", 1),
)

_LITERAL_RE = re.compile(r"^\s*([+-]?\d+(?:\.\d+)?)\s*([a-zA-Z]+)\s*$")
_ISO_DURATION_RE = re.compile(
    r"^P(?:(\d+(?:\.\d+)?)Y)?(?:(\d+(?:\.\d+)?)M)?(?:(\d+(?:\.\d+)?)W)?"
    r"(?:(\d+(?:\.\d+)?)D)?(?:T(?:(\d+(?:\.\d+)?)H)?(?:(\d+(?:\.\d+)?)M)?"
    r"(?:(\d+(?:\.\d+)?)S)?)?$"
)


def parse_timedelta(text: str) -> timedelta:
    """Parse an ISO-8601 duration or a "<n> <unit>" literal like "6 months"."""
    s = text.strip()
    m = _LITERAL_RE.match(s)
    if m:
        qty, unit = float(m.group(1)), m.group(2).lower().rstrip("s")
        if unit == "sec":
            unit = "second"
        if unit == "min":
            unit = "minute"
        for name, secs in _DURATION_UNITS:
            if unit == name:
                return timedelta(seconds=qty * secs)
        raise ValueError(f"unknown duration unit {unit!r}")
    m = _ISO_DURATION_RE.match(s.upper())
    if m and any(m.groups()):
        y, mo, w, d, h, mi, sec = (float(g) if g else 0.0 for g in m.groups())
        total = (
            y * 365 * 86400 + mo * 30 * 86400 + w * 7 * 86400
            + d * 86400 + h * 3600 + mi * 60 + sec
        )
        return timedelta(seconds=total)
    raise ValueError(f"not a duration: {text!r}")


def format_timedelta(td: timedelta) -> str:
    """Render a timedelta with the largest unit that divides it exactly."""
    secs = td.total_seconds()
    if secs == 0:
        return "0 seconds"
    for name, unit_secs in _DURATION_UNITS:
        if secs % unit_secs == 0:
            n = int(secs // unit_secs)
            return f"{n} {name}s" if abs(n) != 1 else f"{n} {name}"
    return f"{secs} seconds"


def parse_datetime(text: str, fmt: Optional[str] = None) -> datetime:
    s = text.strip()
    if fmt:
        return datetime.strptime(s, fmt)
    return datetime.fromisoformat(s)


_EPOCH = datetime(1970, 1, 1)


def format_cell(value: Cell) -> str:
    """Canonical text rendering used in action forms, reports and CSV export."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return str(int(value)) if value.is_integer() and abs(value) < 1e15 else repr(value)
    if isinstance(value, datetime):
        iso = value.isoformat(sep=" ")
        return iso[:10] if iso.endswith("00:00:00") else iso
    if isinstance(value, timedelta):
        return format_timedelta(value)
    return str(value)


# ---------------------------------------------------------------------------
# Column
# ---------------------------------------------------------------------------

@dataclass
class ColumnStats:
    """Summary statistics over the non-null cells of one column.

    Quantitative columns carry entropy (10-bin equal-width histogram, bits),
    population skewness m3/m2^1.5, population excess kurtosis m4/m2^2 - 3 and
    the interquartile-range-to-|mean| ratio. Qualitative columns carry Shannon
    entropy over category frequencies (bits), the distinct-value count and the
    mode with its relative frequency.
    """

    entropy: float = 0.0
    skewness: float = 0.0
    excess_kurtosis: float = 0.0
    iqr_mean_ratio: float = 0.0
    unique_count: int = 0
    mode_value: Cell = None
    mode_frequency: float = 0.0


@dataclass
class Column:
    name: str
    kind: ColumnKind
    values: tuple
    origin: str = "original"  # original | derived | model
    provenance: Optional[str] = None
    base_columns: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not isinstance(self.values, tuple):
            self.values = tuple(self.values)
        if not self.base_columns and self.origin == "original":
            self.base_columns = frozenset([self.name])
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.values)

    # -- lazy derived views -------------------------------------------------

    def non_null(self) -> list:
        if "non_null" not in self._cache:
            self._cache["non_null"] = [v for v in self.values if v is not None]
        return self._cache["non_null"]

    def encoded(self) -> np.ndarray:
        """Numeric encoding with NaN for nulls.

        numerical: identity; datetime/timedelta: epoch/total seconds;
        boolean: 0/1; categorical: integer codes in first-appearance order.
        """
        if "encoded" not in self._cache:
            out = np.full(len(self.values), np.nan)
            if self.kind == ColumnKind.NUMERICAL:
                for i, v in enumerate(self.values):
                    if v is not None:
                        out[i] = v
            elif self.kind == ColumnKind.DATETIME:
                for i, v in enumerate(self.values):
                    if v is not None:
                        out[i] = (v - _EPOCH).total_seconds()
            elif self.kind == ColumnKind.TIMEDELTA:
                for i, v in enumerate(self.values):
                    if v is not None:
                        out[i] = v.total_seconds()
            elif self.kind == ColumnKind.BOOLEAN:
                for i, v in enumerate(self.values):
                    if v is not None:
                        out[i] = 1.0 if v else 0.0
            else:
                codes: dict = {}
                for i, v in enumerate(self.values):
                    if v is not None:
                        out[i] = codes.setdefault(v, float(len(codes)))
            self._cache["encoded"] = out
        return self._cache["encoded"]

    def distinct(self) -> tuple:
        """Distinct non-null values in first-appearance order."""
        if "distinct" not in self._cache:
            seen: dict = {}
            for v in self.values:
                if v is not None:
                    seen.setdefault(v, None)
            self._cache["distinct"] = tuple(seen)
        return self._cache["distinct"]

    def quantile_values(self) -> tuple:
        """Observed values nearest the min/Q1/median/Q3/max positions."""
        if "quantiles" not in self._cache:
            vals = sorted(self.non_null())
            if not vals:
                self._cache["quantiles"] = ()
            else:
                n = len(vals)
                picks = [vals[round(q * (n - 1))] for q in (0.0, 0.25, 0.5, 0.75, 1.0)]
                seen: dict = {}
                for v in picks:
                    seen.setdefault(v, None)
                self._cache["quantiles"] = tuple(seen)
        return self._cache["quantiles"]

    def stats(self) -> ColumnStats:
        if "stats" not in self._cache:
            self._cache["stats"] = column_stats(self)
        return self._cache["stats"]


def column_stats(c: Column) -> ColumnStats:
    """Compute summary statistics; raises DataError on an all-null column."""
    if not c.non_null():
        raise DataError(f"column {c.name!r} has no non-null cells")
    if is_qualitative(c.kind):
        counts: dict = {}
        for v in c.values:
            if v is not None:
                counts[v] = counts.get(v, 0) + 1
        total = sum(counts.values())
        freqs = np.array(list(counts.values()), dtype=float) / total
        entropy = float(-np.sum(freqs * np.log2(freqs)))
        best = max(counts.values())
        # ties resolved by first appearance
        mode_value = next(v for v in counts if counts[v] == best)
        return ColumnStats(
            entropy=entropy,
            unique_count=len(counts),
            mode_value=mode_value,
            mode_frequency=best / total,
        )
    x = c.encoded()
    x = x[~np.isnan(x)]
    mean = float(np.mean(x))
    m2 = float(np.mean((x - mean) ** 2))
    if m2 > 0:
        m3 = float(np.mean((x - mean) ** 3))
        m4 = float(np.mean((x - mean) ** 4))
        skew = m3 / m2 ** 1.5
        kurt = m4 / m2 ** 2 - 3.0
    else:
        skew = kurt = 0.0  # degenerate constant column
    q1, q3 = np.quantile(x, [0.25, 0.75])
    iqr = float(q3 - q1)
    if iqr == 0:
        ratio = 0.0
    elif mean == 0:
        ratio = math.inf
    else:
        ratio = abs(iqr / mean)
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi > lo:
        counts, _ = np.histogram(x, bins=10, range=(lo, hi))
        p = counts[counts > 0] / len(x)
        entropy = float(-np.sum(p * np.log2(p)))
    else:
        entropy = 0.0
    return ColumnStats(
        entropy=entropy, skewness=skew, excess_kurtosis=kurt, iqr_mean_ratio=ratio
    )


def normalized_entropy(c: Column) -> float:
    """Shannon entropy over category frequencies divided by log(k); 0 for k=1."""
    counts: dict = {}
    for v in c.values:
        if v is not None:
            counts[v] = counts.get(v, 0) + 1
    if not counts:
        raise DataError(f"column {c.name!r} has no non-null cells")
    k = len(counts)
    if k == 1:
        return 0.0
    total = sum(counts.values())
    freqs = np.array(list(counts.values()), dtype=float) / total
    return float(-np.sum(freqs * np.log2(freqs)) / math.log2(k))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass
class CorrelationMatrix:
    """Pairwise Pearson coefficients with a validity mask.

    Entries for pairs with fewer than 3 joint observations or zero variance
    are masked invalid rather than NaN.
    """

    names: tuple
    values: np.ndarray  # (p, p) float
    valid: np.ndarray   # (p, p) bool

    def get(self, a: str, b: str) -> Optional[float]:
        i, j = self.names.index(a), self.names.index(b)
        return float(self.values[i, j]) if self.valid[i, j] else None

    def is_valid(self, a: str, b: str) -> bool:
        i, j = self.names.index(a), self.names.index(b)
        return bool(self.valid[i, j])


@dataclass
class Dataset:
    """Immutable ordered collection of equal-length columns.

    ``lineage`` holds the canonical action strings that produced this dataset;
    replaying them against the source table reproduces it cell for cell.
    ``select_pool`` carries the original columns still joinable via select
    (empty once a groupby has replaced the schema) and ``row_index`` maps the
    surviving rows back into the source table for row-aligned joins.
    """

    columns: tuple = ()
    lineage: tuple = ()
    select_pool: tuple = ()
    row_index: Optional[tuple] = None

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.lineage = tuple(self.lineage)
        self.select_pool = tuple(self.select_pool)
        lens = {len(c) for c in self.columns}
        if len(lens) > 1:
            raise DataError(f"ragged dataset: column lengths {sorted(lens)}")
        self._cache: dict = {}

    @property
    def n_rows(self) -> int:
        if self.columns:
            return len(self.columns[0])
        return len(self.row_index) if self.row_index is not None else 0

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> tuple:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def rows(self) -> Iterable[tuple]:
        return zip(*(c.values for c in self.columns)) if self.columns else iter(())

    def pearson(self) -> CorrelationMatrix:
        if "pearson" not in self._cache:
            self._cache["pearson"] = pearson_matrix(self)
        return self._cache["pearson"]

    def distinct_row_count(self, limit: int = 64) -> int:
        """Number of distinct rows, counting stops at ``limit``."""
        key = ("distinct_rows", limit)
        if key not in self._cache:
            seen = set()
            for row in self.rows():
                seen.add(row)
                if len(seen) >= limit:
                    break
            self._cache[key] = len(seen)
        return self._cache[key]

    def content_digest(self) -> bytes:
        """Order-invariant content hash over (schema, row multiset)."""
        if "digest" not in self._cache:
            order = sorted(range(len(self.columns)), key=lambda i: self.columns[i].name)
            schema = ";".join(
                f"{self.columns[i].name}|{self.columns[i].kind.value}|{self.columns[i].provenance or ''}"
                for i in order
            )
            h = hashlib.blake2b(schema.encode(), digest_size=16)
            acc = 0
            cols = [self.columns[i] for i in order]
            for row in zip(*(c.values for c in cols)) if cols else ():
                rh = hashlib.blake2b(
                    "\x1f".join(format_cell(v) for v in row).encode(), digest_size=16
                )
                acc = (acc + int.from_bytes(rh.digest(), "big")) % (1 << 128)
            h.update(acc.to_bytes(16, "big"))
            h.update(str(self.n_rows).encode())
            self._cache["digest"] = h.digest()
        return self._cache["digest"]

    def content_equal(self, other: "Dataset") -> bool:
        if self.names != other.names:
            return False
        return all(
            a.kind == b.kind and a.values == b.values
            for a, b in zip(self.columns, other.columns)
        )


def empty_view(source: Dataset) -> Dataset:
    """The empty dataset rooted at ``source``: no columns, all rows joinable."""
    return Dataset(
        columns=(),
        lineage=(),
        select_pool=source.columns,
        row_index=tuple(range(source.n_rows)),
    )


def pearson_matrix(d: Dataset) -> CorrelationMatrix:
    """Pairwise Pearson over jointly non-null rows of the numeric encodings."""
    p = d.n_columns
    values = np.zeros((p, p))
    valid = np.zeros((p, p), dtype=bool)
    enc = [c.encoded() for c in d.columns]
    ok = [~np.isnan(e) for e in enc]
    for i in range(p):
        xi, oi = enc[i], ok[i]
        if oi.sum() >= 3 and np.nanvar(xi) > 0:
            values[i, i] = 1.0
            valid[i, i] = True
        for j in range(i + 1, p):
            joint = oi & ok[j]
            if joint.sum() < 3:
                continue
            x, y = xi[joint], enc[j][joint]
            vx, vy = x.var(), y.var()
            if vx <= 0 or vy <= 0:
                continue
            r = float(((x - x.mean()) * (y - y.mean())).mean() / math.sqrt(vx * vy))
            values[i, j] = values[j, i] = max(-1.0, min(1.0, r))
            valid[i, j] = valid[j, i] = True
    return CorrelationMatrix(names=d.names, values=values, valid=valid)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_TRUE_WORDS = {"true", "yes"}
_FALSE_WORDS = {"false", "no"}


def _parse_bool(s: str) -> bool:
    w = s.strip().lower()
    if w in _TRUE_WORDS:
        return True
    if w in _FALSE_WORDS:
        return False
    raise ValueError(s)


_PARSERS = {
    ColumnKind.BOOLEAN: _parse_bool,
    ColumnKind.NUMERICAL: lambda s: float(s),
    ColumnKind.DATETIME: parse_datetime,
    ColumnKind.TIMEDELTA: parse_timedelta,
    ColumnKind.CATEGORICAL: lambda s: s,
}

# Inference precedence: a column takes the first kind whose parser accepts
# every non-empty cell, falling back to categorical.
_INFERENCE_ORDER = (
    ColumnKind.BOOLEAN,
    ColumnKind.NUMERICAL,
    ColumnKind.DATETIME,
    ColumnKind.TIMEDELTA,
)


def _infer_kind(cells: Sequence[str]) -> ColumnKind:
    non_empty = [s for s in cells if s.strip() != ""]
    if not non_empty:
        return ColumnKind.CATEGORICAL
    for kind in _INFERENCE_ORDER:
        parser = _PARSERS[kind]
        try:
            for s in non_empty:
                parser(s)
            return kind
        except (ValueError, TypeError):
            continue
    return ColumnKind.CATEGORICAL


def _normalize_schema(schema: Optional[dict]) -> dict:
    out = {}
    for name, desc in (schema or {}).items():
        if isinstance(desc, str):
            out[name] = {"type": desc}
        elif isinstance(desc, dict) and "type" in desc:
            out[name] = desc
        else:
            raise DataError(f"bad schema entry for column {name!r}: {desc!r}")
        try:
            ColumnKind(out[name]["type"])
        except ValueError:
            raise DataError(f"unknown column type {out[name]['type']!r} for {name!r}")
    return out


def load_csv(path: str, schema: Optional[dict] = None) -> Dataset:
    """Load an RFC-4180 CSV (UTF-8, mandatory header row) into a Dataset.

    ``schema`` optionally maps column names to a type name or to
    ``{"type": ..., "format": ...}`` with a strptime format for datetimes;
    unlisted columns get inferred types. Cells that fail to parse raise
    DataError with their row and column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: missing header row")
            raw_rows = [row for row in reader]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for r, row in enumerate(raw_rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
    spec = _normalize_schema(schema)
    unknown = set(spec) - set(header)
    if unknown:
        raise DataError(f"{path}: schema names absent from header: {sorted(unknown)}")
    columns = []
    for ci, name in enumerate(header):
        cells = [row[ci] for row in raw_rows]
        desc = spec.get(name)
        kind = ColumnKind(desc["type"]) if desc else _infer_kind(cells)
        fmt = desc.get("format") if desc else None
        parser = _PARSERS[kind]
        values: list = []
        for ri, s in enumerate(cells):
            if s.strip() == "":
                values.append(None)
                continue
            try:
                if kind == ColumnKind.DATETIME:
                    values.append(parse_datetime(s, fmt))
                else:
                    values.append(parser(s))
            except (ValueError, TypeError) as exc:
                raise DataError(
                    f"{path}: row {ri + 2}, column {name!r}: cannot parse {s!r} as {kind.value}"
                ) from exc
        columns.append(Column(name=name, kind=kind, values=tuple(values)))
    return Dataset(columns=tuple(columns), lineage=(f"load({path})",))


def write_csv(d: Dataset, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(d.names)
        for row in d.rows():
            writer.writerow([format_cell(v) for v in row])


def schema_of(d: Dataset) -> dict:
    """Sidecar schema descriptor for a dataset exported with write_csv."""
    return {c.name: c.kind.value for c in d.columns}
