"""Tabular data model, CSV ingestion and the survey/SPEI lag join."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

BINARY = "binary"
CATEGORICAL = "categorical"
NUMERIC = "numeric"
TARGET = "target"
ROLES = (BINARY, CATEGORICAL, NUMERIC, TARGET)

TIMESCALES = (1, 2, 3, 6, 12, 18, 24)

_MONTH_RE = re.compile(r"^(\d{4})-(0[1-9]|1[0-2])$")
_SPEI_RE = re.compile(r"^spei(\d+)_lag(\d+)$")


class DataError(ValueError):
    """Base class for malformed input data."""


class MissingColumn(DataError):
    pass


class TypeMismatch(DataError):
    pass


class EmptyFile(DataError):
    pass


class DuplicateKey(DataError):
    pass


class BadMonthFormat(DataError):
    pass


class UnknownTimescale(DataError):
    pass


class MissingPanelValue(DataError):
    def __init__(self, key):
        self.key = key
        region, month, timescale = key
        super().__init__(
            f"no SPEI value for region={region!r} month={format_month(month)} timescale={timescale}"
        )


class NegativeLag(DataError):
    pass


class DuplicateColumn(DataError):
    pass


# -- months -----------------------------------------------------------------

def parse_month(text: str) -> int:
    """Parse ``YYYY-MM`` into an absolute month index (year * 12 + month - 1)."""
    m = _MONTH_RE.match(str(text).strip())
    if m is None:
        raise BadMonthFormat(f"bad month {text!r}, expected YYYY-MM")
    return int(m.group(1)) * 12 + int(m.group(2)) - 1


def format_month(index: int) -> str:
    year, month0 = divmod(int(index), 12)
    return f"{year:04d}-{month0 + 1:02d}"


def spei_column(timescale: int, lag: int) -> str:
    return f"spei{timescale}_lag{lag}"


def parse_spei_column(name: str) -> tuple[int, int] | None:
    """Return ``(timescale, lag)`` for a ``spei<T>_lag<L>`` name, else None."""
    m = _SPEI_RE.match(name)
    if m is None:
        return None
    return int(m.group(1)), int(m.group(2))


# -- dataset ----------------------------------------------------------------

@dataclass(frozen=True)
class Column:
    """One named, role-tagged column.

    Numeric, binary and target values are float arrays with NaN as the
    missing marker; categorical values are object arrays of ``str`` with
    ``None`` as the missing marker.
    """

    name: str
    role: str
    values: np.ndarray

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r} for column {self.name!r}")
        if self.role == CATEGORICAL:
            vals = np.asarray(self.values, dtype=object)
        else:
            vals = np.asarray(self.values, dtype=np.float64)
            if np.isinf(vals).any():
                raise TypeMismatch(f"column {self.name!r} contains infinite values")
            present = vals[~np.isnan(vals)]
            if self.role in (BINARY, TARGET) and not np.isin(present, (0.0, 1.0)).all():
                bad = present[~np.isin(present, (0.0, 1.0))][0]
                raise TypeMismatch(f"column {self.name!r} is {self.role} but contains {bad:g}")
            if self.role == TARGET and len(present) != len(vals):
                raise TypeMismatch(f"target column {self.name!r} has missing values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def missing(self) -> np.ndarray:
        if self.role == CATEGORICAL:
            return np.array([v is None for v in self.values], dtype=bool)
        return np.isnan(self.values)

    def labels(self) -> list[str]:
        """Distinct non-missing labels of a categorical column, sorted."""
        return sorted({v for v in self.values if v is not None})


@dataclass(frozen=True)
class Dataset:
    columns: tuple[Column, ...]
    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        index = {}
        for i, c in enumerate(cols):
            if c.name in index:
                raise DuplicateColumn(f"duplicate column name {c.name!r}")
            index[c.name] = i
        object.__setattr__(self, "_index", MappingProxyType(index))
        lengths = {len(c.values) for c in cols}
        if len(lengths) > 1:
            raise ValueError(f"columns have unequal lengths: {sorted(lengths)}")
        if sum(c.role == TARGET for c in cols) > 1:
            raise ValueError("at most one target column is allowed")

    @classmethod
    def from_dict(cls, data: Mapping[str, Sequence], roles: Mapping[str, str]) -> "Dataset":
        return cls(tuple(Column(name, roles[name], _coerce(values, roles[name])) for name, values in data.items()))

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].values) if self.columns else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def target(self) -> str | None:
        for c in self.columns:
            if c.role == TARGET:
                return c.name
        return None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        return self.column(name).values

    def column(self, name: str) -> Column:
        try:
            return self.columns[self._index[name]]
        except KeyError:
            raise MissingColumn(f"no column named {name!r}") from None

    def role(self, name: str) -> str:
        return self.column(name).role

    def y(self) -> np.ndarray:
        if self.target is None:
            raise MissingColumn("dataset has no target column")
        return self[self.target].astype(np.int8)

    def feature_names(self, exclude: Iterable[str] = ()) -> list[str]:
        skip = set(exclude)
        return [c.name for c in self.columns if c.role != TARGET and c.name not in skip]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(tuple(Column(c.name, c.role, c.values[rows]) for c in self.columns))

    def select(self, names: Iterable[str]) -> "Dataset":
        return Dataset(tuple(self.column(n) for n in names))

    def drop(self, names: Iterable[str]) -> "Dataset":
        skip = set(names)
        return Dataset(tuple(c for c in self.columns if c.name not in skip))

    def with_columns(self, new: Iterable[Column], after: str | None = None) -> "Dataset":
        """Append columns (or insert them right after ``after``)."""
        new = tuple(new)
        if after is None:
            return Dataset(self.columns + new)
        pos = self._index[after] + 1
        return Dataset(self.columns[:pos] + new + self.columns[pos:])

    def replace(self, name: str, new: Sequence[Column]) -> "Dataset":
        """Replace column ``name`` in place by zero or more columns."""
        pos = self._index[name]
        return Dataset(self.columns[:pos] + tuple(new) + self.columns[pos + 1:])

    def retarget(self, name: str) -> "Dataset":
        """Make ``name`` the target; a previous target becomes a binary column."""
        cols = []
        for c in self.columns:
            if c.name == name:
                cols.append(Column(c.name, TARGET, c.values))
            elif c.role == TARGET:
                cols.append(Column(c.name, BINARY, c.values))
            else:
                cols.append(c)
        if name not in self._index:
            raise MissingColumn(f"no column named {name!r}")
        return Dataset(tuple(cols))

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Float matrix of numeric/binary columns (NaN for missing)."""
        out = np.empty((self.n_rows, len(names)), dtype=np.float64)
        for j, n in enumerate(names):
            col = self.column(n)
            if col.role == CATEGORICAL:
                raise TypeMismatch(f"column {n!r} is categorical; encode it first")
            out[:, j] = col.values
        return out


def _coerce(values, role):
    if role == CATEGORICAL:
        return np.array([None if v is None else str(v) for v in values], dtype=object)
    return np.array([np.nan if v is None else float(v) for v in values], dtype=np.float64)


def encode_categorical(ds: Dataset, names: Sequence[str]):
    """Float design matrix where categorical columns hold label codes.

    Returns ``(X, categorical_mask, vocabularies)``; vocabularies map a
    column index to its sorted label list (code = position).
    """
    X = np.empty((ds.n_rows, len(names)), dtype=np.float64)
    mask = np.zeros(len(names), dtype=bool)
    vocabs: dict[int, list[str]] = {}
    for j, n in enumerate(names):
        col = ds.column(n)
        if col.role == CATEGORICAL:
            labels = col.labels()
            lookup = {lab: i for i, lab in enumerate(labels)}
            X[:, j] = [np.nan if v is None else lookup[v] for v in col.values]
            mask[j] = True
            vocabs[j] = labels
        else:
            X[:, j] = col.values
    return X, mask, vocabs


# -- survey CSV ---------------------------------------------------------------

def ingest_survey(path, schema: Sequence[tuple[str, str]]) -> Dataset:
    """Read a survey CSV with declared column roles.

    Empty cells become missing markers. Every schema name must appear in
    the header; extra header columns are an error as well.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    names = [n for n, _ in schema]
    for n in names:
        if n not in header:
            raise MissingColumn(f"{path}: column {n!r} missing from header")
    extra = [h for h in header if h not in names]
    if extra:
        raise MissingColumn(f"{path}: header has undeclared columns {extra}")
    if not rows:
        raise EmptyFile(f"{path}: header only, no data rows")
    pos = {h: i for i, h in enumerate(header)}
    cols = []
    for name, role in schema:
        j = pos[name]
        raw = [r[j].strip() if j < len(r) else "" for r in rows]
        if role == CATEGORICAL:
            vals = np.array([v if v != "" else None for v in raw], dtype=object)
        else:
            vals = np.empty(len(raw))
            for i, v in enumerate(raw):
                if v == "":
                    vals[i] = np.nan
                    continue
                try:
                    vals[i] = float(v)
                except ValueError:
                    raise TypeMismatch(f"{path}: row {i + 2}, column {name!r}: {v!r} is not numeric") from None
                if not math.isfinite(vals[i]):
                    raise TypeMismatch(f"{path}: row {i + 2}, column {name!r}: non-finite value {v!r}")
        try:
            cols.append(Column(name, role, vals))
        except TypeMismatch as exc:
            raise TypeMismatch(f"{path}: {exc}") from None
    return Dataset(tuple(cols))


def _fmt(value, role) -> str:
    if role == CATEGORICAL:
        return "" if value is None else value
    if np.isnan(value):
        return ""
    if role in (BINARY, TARGET) or float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_survey(ds: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ds.names)
        roles = [c.role for c in ds.columns]
        for i in range(ds.n_rows):
            w.writerow([_fmt(c.values[i], r) for c, r in zip(ds.columns, roles)])


def infer_schema(path, roles: Mapping[str, str] | None = None, default: str = NUMERIC) -> list[tuple[str, str]]:
    """Schema from a CSV header; unlisted columns get ``default``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        try:
            header = next(csv.reader(fh))
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
    roles = roles or {}
    return [(h.strip(), roles.get(h.strip(), default)) for h in header]


# -- SPEI panel -------------------------------------------------------------

class SpeiPanel:
    """Immutable map ``(region_id, month_index, timescale) -> SPEI value``."""

    def __init__(self, entries: Mapping[tuple[str, int, int], float] | Iterable[tuple[tuple[str, int, int], float]]):
        items = entries.items() if isinstance(entries, Mapping) else entries
        data: dict[tuple[str, int, int], float] = {}
        for (region, month, timescale), value in items:
            key = (str(region), int(month), int(timescale))
            if key[2] not in TIMESCALES:
                raise UnknownTimescale(f"timescale {timescale} not in {TIMESCALES}")
            if key in data:
                raise DuplicateKey(f"duplicate SPEI key region={key[0]} month={format_month(key[1])} timescale={key[2]}")
            data[key] = float(value)
        self._data = MappingProxyType(data)
        self._cube = None

    def __len__(self):
        return len(self._data)

    def __getitem__(self, key):
        return self._data[key]

    def get(self, key, default=None):
        return self._data.get(key, default)

    def __contains__(self, key):
        return key in self._data

    def items(self):
        return self._data.items()

    @property
    def regions(self) -> list[str]:
        return sorted({k[0] for k in self._data})

    def cube(self):
        """Dense ``(regions, months, timescales)`` array, NaN where absent."""
        if self._cube is None:
            regions = self.regions
            months = [k[1] for k in self._data]
            lo, hi = (min(months), max(months)) if months else (0, -1)
            arr = np.full((len(regions), hi - lo + 1, len(TIMESCALES)), np.nan)
            r_idx = {r: i for i, r in enumerate(regions)}
            t_idx = {t: i for i, t in enumerate(TIMESCALES)}
            for (r, m, t), v in self._data.items():
                arr[r_idx[r], m - lo, t_idx[t]] = v
            self._cube = (r_idx, lo, arr)
        return self._cube

    def shifted(self, months: int) -> "SpeiPanel":
        return SpeiPanel({(r, m + months, t): v for (r, m, t), v in self._data.items()})


def ingest_spei(path) -> SpeiPanel:
    """Read a long-format SPEI CSV (``region_id,month,timescale,value``)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyFile(f"{path}: file is empty")
        fields = [f.strip() for f in reader.fieldnames]
        for need in ("region_id", "month", "timescale", "value"):
            if need not in fields:
                raise MissingColumn(f"{path}: column {need!r} missing from header")
        reader.fieldnames = fields
        entries = []
        for i, row in enumerate(reader, start=2):
            try:
                timescale = int(row["timescale"])
                value = float(row["value"])
            except (TypeError, ValueError):
                raise TypeMismatch(f"{path}: row {i}: bad timescale/value {row['timescale']!r}/{row['value']!r}") from None
            try:
                month = parse_month(row["month"])
            except BadMonthFormat as exc:
                raise BadMonthFormat(f"{path}: row {i}: {exc}") from None
            entries.append(((row["region_id"].strip(), month, timescale), value))
    try:
        return SpeiPanel(entries)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def write_spei(panel: SpeiPanel, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "month", "timescale", "value"])
        for (r, m, t), v in sorted(panel.items()):
            w.writerow([r, format_month(m), t, repr(v)])


def join_and_lag(
    survey: Dataset,
    panel: SpeiPanel,
    timescales: Iterable[int] = TIMESCALES,
    max_lag: int = 48,
    region_col: str = "region_id",
    month_col: str = "interview_month",
    on_missing: str = "error",
) -> Dataset:
    """Attach ``spei<T>_lag<L>`` columns for every timescale and lag 0..max_lag.

    The value for a row interviewed in month ``m`` is the panel value at
    ``(region, m - L, T)``. With ``on_missing="mark"`` absent panel values
    become missing markers instead of raising :class:`MissingPanelValue`.
    """
    if max_lag < 0:
        raise NegativeLag(f"max_lag must be >= 0, got {max_lag}")
    timescales = sorted(set(int(t) for t in timescales))
    for t in timescales:
        if t not in TIMESCALES:
            raise UnknownTimescale(f"timescale {t} not in {TIMESCALES}")
    regions = survey[region_col]
    months = np.array([parse_month(m) if m is not None else -1 for m in survey[month_col]])
    if any(r is None for r in regions) or (months < 0).any():
        raise MissingColumn(f"every row needs {region_col} and {month_col}")
    r_idx, m0, cube = panel.cube()
    n_months = cube.shape[1]
    rows_r = np.array([r_idx.get(r, -1) for r in regions])
    t_pos = {t: i for i, t in enumerate(TIMESCALES)}
    new_cols = []
    for t in timescales:
        ti = t_pos[t]
        for lag in range(max_lag + 1):
            mi = months - lag - m0
            ok = (rows_r >= 0) & (mi >= 0) & (mi < n_months)
            vals = np.full(survey.n_rows, np.nan)
            vals[ok] = cube[rows_r[ok], mi[ok], ti]
            bad = np.isnan(vals)
            if bad.any() and on_missing == "error":
                i = int(np.flatnonzero(bad)[0])
                raise MissingPanelValue((regions[i], int(months[i] - lag), t))
            new_cols.append(Column(spei_column(t, lag), NUMERIC, vals))
    return survey.with_columns(new_cols)
