"""Column transformations: one-hot, binarization, equal-width bins, bin merging.

A :class:`Preprocessor` strings these together. It is fitted on training
rows only and serializes to a JSON manifest so the same transformation can
be re-applied to held-out rows.
"""
from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import BINARY, CATEGORICAL, NUMERIC, TARGET, Column, DataError, Dataset


class UnknownColumn(DataError):
    pass


class WrongRole(DataError):
    pass


class OutOfRange(DataError):
    pass


class ConstantColumn(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewDistinctValues(DataError):
    pass


@dataclass(frozen=True)
class BinEdges:
    """Ascending interval edges; interval i is ``[edges[i], edges[i+1])``.

    The last interval is closed above. Outer edges may be infinite.
    """

    edges: tuple[float, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        labels = tuple(str(s) for s in self.labels)
        if len(edges) < 2:
            raise ValueError("need at least two edges")
        if any(np.isnan(edges)) or any(np.isinf(edges[1:-1])):
            raise ValueError("interior edges must be finite")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError(f"edges must be strictly increasing: {edges}")
        if len(labels) != len(edges) - 1:
            raise ValueError(f"{len(edges) - 1} intervals but {len(labels)} labels")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return len(self.labels)

    def assign(self, values, clip: bool = False) -> np.ndarray:
        """Interval index per value (-1 for missing).

        Without ``clip`` a value outside ``[edges[0], edges[-1]]`` raises
        :class:`OutOfRange`; with it, such values go to the outer bins.
        """
        v = np.asarray(values, dtype=np.float64)
        e = np.asarray(self.edges)
        idx = np.searchsorted(e, v, side="right") - 1
        idx = np.where(v == e[-1], self.k - 1, idx)
        out = (idx < 0) | (idx >= self.k)
        miss = np.isnan(v)
        out &= ~miss
        if out.any():
            if not clip:
                bad = v[out][0]
                raise OutOfRange(f"value {bad:g} outside bin edges {list(self.edges)}")
            idx = np.clip(idx, 0, self.k - 1)
        return np.where(miss, -1, idx)

    def midpoints(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return (e[:-1] + e[1:]) / 2

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "labels": list(self.labels)}

    @classmethod
    def from_dict(cls, d) -> "BinEdges":
        return cls(tuple(d["edges"]), tuple(d["labels"]))


def _require(ds: Dataset, column: str, role: str) -> Column:
    if column not in ds:
        raise UnknownColumn(f"no column named {column!r}")
    col = ds.column(column)
    if col.role != role:
        raise WrongRole(f"column {column!r} has role {col.role}, expected {role}")
    return col


def one_hot(ds: Dataset, column: str, labels: Sequence[str] | None = None) -> Dataset:
    """Replace a categorical column by one binary column per label.

    ``labels`` fixes the vocabulary and its order (default: sorted distinct
    labels). Rows with a label outside the vocabulary get all zeros; missing
    rows get missing markers.
    """
    col = _require(ds, column, CATEGORICAL)
    labels = list(labels) if labels is not None else col.labels()
    vals = col.values
    miss = col.missing
    new = []
    for lab in labels:
        ind = np.array([v == lab for v in vals], dtype=np.float64)
        ind[miss] = np.nan
        new.append(Column(f"{column}_{lab}", BINARY, ind))
    return ds.replace(column, new)


def categorize(ds: Dataset, column: str, edges: BinEdges, clip: bool = False) -> Dataset:
    """Turn a numeric column into a categorical one labelled by interval."""
    col = _require(ds, column, NUMERIC)
    idx = edges.assign(col.values, clip=clip)
    labels = np.array([None if i < 0 else edges.labels[i] for i in idx], dtype=object)
    return ds.replace(column, [Column(column, CATEGORICAL, labels)])


def binarize_numeric(ds: Dataset, column: str, edges: BinEdges, clip: bool = False) -> Dataset:
    """Interval-label a numeric column, then one-hot encode it."""
    return one_hot(categorize(ds, column, edges, clip=clip), column, edges.labels)


def discretize_equal_width(values, k: int = 7) -> BinEdges:
    """Equal-width bins: step = (max - min) / k over the finite values."""
    if k < 1:
        raise ValueError("k must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        raise EmptyInput("no finite values to discretize")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        raise ConstantColumn(f"all values equal {lo:g}; cannot discretize")
    step = (hi - lo) / k
    edges = [lo + i * step for i in range(k)] + [hi]
    return BinEdges(tuple(edges), tuple(f"bin{i + 1}" for i in range(k)))


def _point_biserial(indicator: np.ndarray, target: np.ndarray) -> float:
    sx, sy = indicator.std(), target.std()
    if sx == 0 or sy == 0:
        return 0.0
    return float(((indicator - indicator.mean()) * (target - target.mean())).mean() / (sx * sy))


def supervised_bin_merge(values, target, initial_k: int = 10, final_k: int = 4) -> BinEdges:
    """Greedy merge of equal-frequency bins by target correlation.

    Starts from ``initial_k`` quantile bins (duplicate edges collapsed),
    then repeatedly merges the adjacent pair whose point-biserial
    correlations with the target are closest, leftmost pair on ties, until
    ``final_k`` bins remain. Returned edges are a subset of the initial ones.
    """
    v = np.asarray(values, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if v.shape != y.shape:
        raise ValueError("values and target lengths differ")
    keep = ~np.isnan(v)
    v, y = v[keep], y[keep]
    if v.size == 0:
        raise EmptyInput("no values to bin")
    if initial_k < 2:
        raise ValueError("initial_k must be >= 2")
    edges = np.unique(np.quantile(v, np.linspace(0, 1, initial_k + 1)))
    if len(edges) - 1 < final_k:
        raise TooFewDistinctValues(
            f"only {len(edges) - 1} distinct quantile bins, {final_k} requested"
        )
    edges = list(edges)
    while len(edges) - 1 > final_k:
        be = BinEdges(tuple(edges), tuple(str(i) for i in range(len(edges) - 1)))
        idx = be.assign(v)
        corr = [_point_biserial((idx == i).astype(np.float64), y) for i in range(be.k)]
        gaps = np.abs(np.diff(corr))
        j = int(np.argmin(gaps))
        del edges[j + 1]
    return BinEdges(tuple(edges), tuple(f"bin{i + 1}" for i in range(len(edges) - 1)))


# -- preprocessor -------------------------------------------------------------

# step ops: keep, drop, onehot, bins (fixed edges then one-hot), merge
# (supervised_bin_merge then one-hot), equal_width (ordinal bin number 1..k)
OPS = ("keep", "drop", "onehot", "bins", "merge", "equal_width")


@dataclass
class Preprocessor:
    """Ordered list of column steps; fit on training rows, reapply anywhere.

    ``steps`` entries are dicts with ``column`` (an fnmatch pattern) and
    ``op``; columns not matched by any step are dropped. After ``fit`` the
    ``fitted`` list holds one concrete entry per source column.
    """

    steps: list[dict]
    fitted: list[dict] = field(default_factory=list)

    def _step_for(self, name):
        for step in self.steps:
            if fnmatch.fnmatchcase(name, step["column"]):
                return step
        return None

    def fit(self, ds: Dataset) -> "Preprocessor":
        fitted = []
        y = ds.y().astype(np.float64) if ds.target is not None else None
        for col in ds.columns:
            if col.role == TARGET:
                continue
            step = self._step_for(col.name)
            if step is None or step["op"] == "drop":
                continue
            op = step["op"]
            entry = {"column": col.name, "op": op}
            if op == "onehot":
                entry["labels"] = step.get("labels") or _require(ds, col.name, CATEGORICAL).labels()
            elif op == "bins":
                entry["bins"] = BinEdges(tuple(step["edges"]), tuple(step["labels"])).to_dict()
            elif op == "merge":
                if y is None:
                    raise ValueError("merge step needs a target column")
                be = supervised_bin_merge(col.values, y, step.get("initial_k", 10), step.get("final_k", 4))
                entry["bins"] = be.to_dict()
            elif op == "equal_width":
                entry["bins"] = discretize_equal_width(col.values, step.get("k", 7)).to_dict()
            elif op != "keep":
                raise ValueError(f"unknown op {op!r}")
            fitted.append(entry)
        self.fitted = fitted
        return self

    def transform(self, ds: Dataset) -> Dataset:
        if not self.fitted and self.steps:
            raise RuntimeError("preprocessor is not fitted")
        out = []
        for entry in self.fitted:
            name, op = entry["column"], entry["op"]
            if op == "keep":
                out.append(ds.column(name))
                continue
            sub = ds.select([name])
            if op == "onehot":
                out.extend(one_hot(sub, name, entry["labels"]).columns)
            elif op in ("bins", "merge"):
                be = BinEdges.from_dict(entry["bins"])
                out.extend(binarize_numeric(sub, name, be, clip=op == "merge").columns)
            elif op == "equal_width":
                be = BinEdges.from_dict(entry["bins"])
                idx = be.assign(ds[name], clip=True)
                out.append(Column(name, NUMERIC, np.where(idx < 0, np.nan, idx + 1.0)))
        if ds.target is not None:
            out.append(ds.column(ds.target))
        return Dataset(tuple(out))

    def fit_transform(self, ds: Dataset) -> Dataset:
        return self.fit(ds).transform(ds)

    def output_names(self) -> list[str]:
        names = []
        for e in self.fitted:
            if e["op"] in ("keep", "equal_width"):
                names.append(e["column"])
            elif e["op"] == "onehot":
                names.extend(f"{e['column']}_{lab}" for lab in e["labels"])
            else:
                names.extend(f"{e['column']}_{lab}" for lab in e["bins"]["labels"])
        return names

    def to_dict(self) -> dict:
        return {"steps": self.steps, "fitted": self.fitted, "columns": self.output_names()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "Preprocessor":
        return cls(steps=list(d["steps"]), fitted=list(d["fitted"]))

    @classmethod
    def from_json(cls, text: str) -> "Preprocessor":
        return cls.from_dict(json.loads(text))


AGE_EDGES = BinEdges((15, 25, 35, 50), ("1524", "2534", "35plus"))


def gwp_steps(spei: bool = True, gwp: bool = True, spei_bins: int = 7) -> list[dict]:
    """Preprocessing plan for the survey layout emitted by the generator."""
    steps: list[dict] = []
    if gwp:
        steps += [
            {"column": "origin", "op": "onehot"},
            {"column": "year", "op": "onehot"},
            {"column": "hhsize", "op": "merge", "initial_k": 10, "final_k": 4},
            {"column": "lnhhincpc", "op": "merge", "initial_k": 10, "final_k": 4},
            {"column": "age", "op": "bins", "edges": list(AGE_EDGES.edges), "labels": list(AGE_EDGES.labels)},
            {"column": "male", "op": "keep"},
            {"column": "urban", "op": "keep"},
            {"column": "mabr", "op": "keep"},
            {"column": "hskill", "op": "keep"},
        ]
    if spei:
        steps.append({"column": "spei*_lag*", "op": "equal_width", "k": spei_bins})
    return steps
