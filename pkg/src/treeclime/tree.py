"""CART-style classification tree with Gini splits.

Numeric features get binary ``x <= threshold`` splits; categorical features
(integer label codes) get one child per label present in the node.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset, encode_categorical


class TreeError(ValueError):
    pass


class EmptyNode(TreeError):
    pass


class EmptyDataset(TreeError):
    pass


class SchemaMismatch(TreeError):
    pass


def gini_impurity(n_yes: float, n_no: float) -> float:
    """``1 - p^2 - (1-p)^2`` with ``p = n_yes / (n_yes + n_no)``."""
    n = n_yes + n_no
    if n < 1:
        raise EmptyNode("gini of an empty node")
    p = n_yes / n
    return 1.0 - p * p - (1.0 - p) ** 2


@dataclass(frozen=True)
class TreeParams:
    cost_complexity: float = 1e-5
    max_depth: int = 30
    min_node: int = 20

    def __post_init__(self):
        if self.min_node < 1:
            raise ValueError("min_node must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.cost_complexity < 0:
            raise ValueError("cost_complexity must be >= 0")


class Binner:
    """Maps raw feature values to the integer codes the builders work on.

    Numeric features with at most ``max_bins`` distinct training values are
    coded exactly (cuts at midpoints between neighbours); otherwise cuts are
    placed at training quantiles. Categorical features are already codes.
    """

    def __init__(self, max_bins: int = 256):
        self.max_bins = max_bins

    def fit(self, X: np.ndarray, categorical: np.ndarray) -> "Binner":
        X = np.asarray(X, dtype=np.float64)
        p = X.shape[1]
        self.categorical = np.asarray(categorical, dtype=bool)
        self.n_codes = np.zeros(p, dtype=np.int64)
        cut_lists = []
        for j in range(p):
            col = X[:, j]
            col = col[~np.isnan(col)]
            if self.categorical[j]:
                if col.size and (col.min() < 0 or not np.all(col == np.round(col))):
                    raise SchemaMismatch(f"categorical feature {j} must hold non-negative integer codes")
                self.n_codes[j] = int(col.max()) + 1 if col.size else 1
                cut_lists.append(np.empty(0))
                continue
            u = np.unique(col)
            if u.size <= self.max_bins:
                cuts = (u[:-1] + u[1:]) / 2
            else:
                qs = np.quantile(col, np.linspace(0, 1, self.max_bins + 1)[1:-1], method="lower")
                cuts = np.unique(qs)
            cut_lists.append(cuts)
            self.n_codes[j] = cuts.size + 1
        width = max(1, max((c.size for c in cut_lists), default=1))
        self.cuts = np.full((p, width), np.inf)
        for j, c in enumerate(cut_lists):
            self.cuts[j, : c.size] = c
        return self

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        codes = np.empty((X.shape[1], X.shape[0]), dtype=np.int16)
        for j in range(X.shape[1]):
            col = X[:, j]
            miss = np.isnan(col)
            if self.categorical[j]:
                c = np.where(miss, -1, col)
                c = np.where((c >= self.n_codes[j]), -1, c)
            else:
                k = self.n_codes[j] - 1
                c = np.searchsorted(self.cuts[j, :k], col, side="left")
                c = np.where(miss, -1, c)
            codes[j] = c
        return codes


def _as_design(X, y, categorical, feature_names):
    vocabs = {}
    if isinstance(X, Dataset):
        ds = X
        names = feature_names or ds.feature_names()
        if y is None:
            y = ds.y()
        X, categorical, vocabs = encode_categorical(ds, names)
        feature_names = names
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SchemaMismatch("X must be two-dimensional")
    p = X.shape[1]
    if categorical is None:
        categorical = np.zeros(p, dtype=bool)
    categorical = np.asarray(categorical, dtype=bool)
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(p)]
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise SchemaMismatch(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    return X, y, categorical, list(feature_names), vocabs


@dataclass
class Tree:
    """Flat-array tree.

    ``value`` is P(yes) at each node for classification trees and the leaf
    output for boosting trees. ``n_yes``/``n_tot`` are (weighted) training
    counts; ``gain`` is the split gain of boosting trees.
    """

    feature: np.ndarray
    threshold: np.ndarray
    child_start: np.ndarray
    n_children: np.ndarray
    child_ids: np.ndarray
    default_child: np.ndarray
    value: np.ndarray
    n_yes: np.ndarray
    n_tot: np.ndarray
    depth: np.ndarray
    categorical: np.ndarray
    feature_names: list[str]
    vocabs: dict = field(default_factory=dict)
    params: TreeParams | None = None
    kind: str = "classifier"
    gain: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max()) if self.depth.size else 0

    def children(self, node: int) -> list[int]:
        s, m = self.child_start[node], self.n_children[node]
        return [int(c) for c in self.child_ids[s : s + m] if c >= 0]

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.ascontiguousarray(X)

    def _arrays(self):
        return (self.categorical, self.feature, self.threshold, self.child_start, self.n_children,
                self.child_ids, self.default_child)

    def apply(self, X) -> np.ndarray:
        X = self._check(X)
        zero = np.zeros(1, np.int64)
        return _kernels.apply_packed(X, *self._arrays(), zero, zero)[:, 0]

    def predict_value(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict_proba(self, X) -> np.ndarray:
        if self.kind != "classifier":
            raise TypeError("predict_proba is defined for classification trees")
        return self.predict_value(X)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def node_gains(self) -> np.ndarray:
        """Per-node impurity decrease ``n*G(parent) - sum n_c*G(child)``."""
        if self.kind != "classifier":
            return self.gain.copy()
        mass = self.n_tot - (self.n_yes**2 + (self.n_tot - self.n_yes) ** 2) / np.maximum(self.n_tot, 1e-300)
        inner = np.flatnonzero(self.feature >= 0)
        m = self.n_children[inner].astype(np.int64)
        parent = np.repeat(inner, m)
        offset = np.arange(m.sum()) - np.repeat(np.cumsum(m) - m, m)
        kid = self.child_ids[np.repeat(self.child_start[inner], m) + offset]
        ok = kid >= 0
        out = np.zeros(self.n_nodes)
        out[inner] = mass[inner]
        np.subtract.at(out, parent[ok], mass[kid[ok]])
        return out

    def _condition(self, node, j):
        f = int(self.feature[node])
        name = self.feature_names[f]
        if self.categorical[f]:
            labels = self.vocabs.get(f)
            lab = labels[j] if labels is not None else j
            return f, "==", j, f"{name} = {lab}"
        thr = float(self.threshold[node])
        if j == 0:
            return f, "<=", thr, f"{name} <= {thr:.6g}"
        return f, ">", thr, f"{name} > {thr:.6g}"

    def paths(self) -> list[tuple[list[tuple], int]]:
        """Root-to-leaf paths as ``(conditions, leaf_id)``.

        A condition is ``(feature, op, value, text)``; the leaf set read as
        indicator variables is the linear-model view of the tree.
        """
        out = []
        stack = [(0, [])]
        while stack:
            node, conds = stack.pop()
            if self.feature[node] < 0:
                out.append((conds, node))
                continue
            s, m = self.child_start[node], self.n_children[node]
            kids = []
            for j in range(m):
                c = int(self.child_ids[s + j])
                if c >= 0:
                    kids.append((c, conds + [self._condition(node, j)]))
            stack.extend(reversed(kids))
        return out

    def rules(self) -> list[str]:
        lines = []
        for conds, leaf in self.paths():
            lhs = " AND ".join(c[3] for c in conds) or "(root)"
            if self.kind == "classifier":
                lines.append(f"{lhs} -> P(yes)={self.value[leaf]:.4f} (n={self.n_tot[leaf]:g})")
            else:
                lines.append(f"{lhs} -> {self.value[leaf]:.6g} (n={self.n_tot[leaf]:g})")
        return lines

    def to_dict(self) -> dict:
        def node(i):
            d = {"id": int(i), "n": float(self.n_tot[i]), "value": float(self.value[i])}
            if self.kind == "classifier":
                d["n_yes"] = float(self.n_yes[i])
            f = int(self.feature[i])
            if f < 0:
                return d
            d["feature"] = self.feature_names[f]
            d["default"] = int(self.default_child[i])
            s, m = self.child_start[i], self.n_children[i]
            if self.categorical[f]:
                d["children"] = {str(j): node(int(self.child_ids[s + j])) for j in range(m) if self.child_ids[s + j] >= 0}
            else:
                d["threshold"] = float(self.threshold[i])
                d["children"] = [node(int(self.child_ids[s])), node(int(self.child_ids[s + 1]))]
            if self.gain is not None:
                d["gain"] = float(self.gain[i])
            return d

        return {
            "kind": self.kind,
            "feature_names": self.feature_names,
            "categorical": [bool(c) for c in self.categorical],
            "vocabs": {str(k): v for k, v in self.vocabs.items()},
            "params": asdict(self.params) if self.params else None,
            "root": node(0),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        names = list(d["feature_names"])
        pos = {n: j for j, n in enumerate(names)}
        cat = np.array(d["categorical"], dtype=bool)
        rows = []
        child_ids: list[int] = []

        def visit(nd, depth):
            rows.append(None)
            i = len(rows) - 1
            rec = {"id": i, "depth": depth, "n": nd["n"], "n_yes": nd.get("n_yes", 0.0), "value": nd["value"],
                   "gain": nd.get("gain", 0.0), "feature": -1, "threshold": 0.0, "start": 0, "m": 0, "default": -1}
            rows[i] = rec
            if "feature" not in nd:
                return i
            f = pos[nd["feature"]]
            rec["feature"] = f
            kids = nd["children"]
            if cat[f]:
                m = max(int(k) for k in kids) + 1
                slots = [-1] * m
                remap = {}
                for k in sorted(kids, key=int):
                    cid = visit(kids[k], depth + 1)
                    slots[int(k)] = cid
                    remap[kids[k]["id"]] = cid
            else:
                rec["threshold"] = nd["threshold"]
                m = 2
                slots = [visit(kids[0], depth + 1), visit(kids[1], depth + 1)]
                remap = {kids[0]["id"]: slots[0], kids[1]["id"]: slots[1]}
            rec["start"] = len(child_ids)
            rec["m"] = m
            child_ids.extend(slots)
            rec["default"] = remap.get(nd.get("default"), next(s for s in slots if s >= 0))
            return i

        visit(d["root"], 0)
        params = TreeParams(**d["params"]) if d.get("params") else None
        kind = d.get("kind", "classifier")
        return cls(
            feature=np.array([r["feature"] for r in rows], np.int32),
            threshold=np.array([r["threshold"] for r in rows], np.float64),
            child_start=np.array([r["start"] for r in rows], np.int32),
            n_children=np.array([r["m"] for r in rows], np.int32),
            child_ids=np.array(child_ids, np.int32),
            default_child=np.array([r["default"] for r in rows], np.int32),
            value=np.array([r["value"] for r in rows], np.float64),
            n_yes=np.array([r["n_yes"] for r in rows], np.float64),
            n_tot=np.array([r["n"] for r in rows], np.float64),
            depth=np.array([r["depth"] for r in rows], np.int32),
            categorical=cat,
            feature_names=names,
            vocabs={int(k): v for k, v in d.get("vocabs", {}).items()},
            params=params,
            kind=kind,
            gain=np.array([r["gain"] for r in rows], np.float64) if kind != "classifier" else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def fit_tree(X, y=None, params: TreeParams = TreeParams(), seed: int = 0, categorical=None,
             feature_names=None, sample_weight=None, mtry: int | None = None,
             binner: Binner | None = None, codes: np.ndarray | None = None) -> Tree:
    """Grow a classification tree by greedy Gini minimisation.

    At each node the (feature, split) with the lowest weighted child Gini
    wins; ties go to the lowest feature index, then the lowest threshold.
    A node becomes a leaf when it is pure, has fewer than ``min_node``
    rows, sits at ``max_depth``, or its best split improves impurity by
    less than ``cost_complexity`` times the root impurity (both measured
    as mass relative to the root sample).

    ``mtry`` samples that many non-constant features per node (random
    forest mode). ``binner``/``codes`` let ensembles reuse one coding.
    """
    X, y, categorical, feature_names, vocabs = _as_design(X, y, categorical, feature_names)
    n, p = X.shape
    if n == 0:
        raise EmptyDataset("cannot fit a tree on zero rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise TreeError("targets must be 0/1")
    if binner is None:
        binner = Binner().fit(X, categorical)
    if codes is None:
        codes = binner.transform(X)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    rows = np.flatnonzero(w > 0)
    if rows.size == 0:
        raise EmptyDataset("all sample weights are zero")
    pool = np.arange(p, dtype=np.int64)
    m = p if mtry is None else int(mtry)
    (feature, threshold, _thr_code, child_start, n_children, child_ids, default_child,
     n_yes, n_tot, depth) = _kernels.build_classifier(
        codes, binner.n_codes, binner.categorical, binner.cuts, y, w, rows, pool,
        params.max_depth, float(params.min_node), float(params.cost_complexity), m, np.uint64(seed % 2**64))
    value = np.where(n_tot > 0, n_yes / np.maximum(n_tot, 1e-300), 0.0)
    return Tree(feature, threshold, child_start, n_children, child_ids, default_child, value,
                n_yes, n_tot, depth, categorical.copy(), list(feature_names), vocabs, params)


def predict_tree(t: Tree, row) -> float:
    """P(yes) for a single feature vector."""
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size != t.n_features:
        raise SchemaMismatch(f"expected a row of {t.n_features} features")
    return float(t.predict_proba(row[None, :])[0])


def build_fixed_tree(structure: dict, X, y=None, feature_names=None, categorical=None) -> Tree:
    """Tree with a hand-given structure; leaf counts come from routing (X, y).

    ``structure`` is nested: ``{"feature": name, "children": {...}}`` for a
    categorical split keyed by label (or code), ``{"feature": name,
    "threshold": t, "children": [left, right]}`` for a numeric split, and
    ``None`` for a leaf.
    """
    X, y, categorical, feature_names, vocabs = _as_design(X, y, categorical, feature_names)
    pos = {n: j for j, n in enumerate(feature_names)}

    def visit(node, rows, depth):
        nd = {"n": float(rows.size), "n_yes": float(y[rows].sum())}
        nd["value"] = nd["n_yes"] / nd["n"] if rows.size else 0.0
        if node is None:
            return nd
        f = pos[node["feature"]]
        nd["feature"] = node["feature"]
        col = X[rows, f]
        if categorical[f]:
            labels = vocabs.get(f)
            kids = {}
            for key, sub in node["children"].items():
                code = labels.index(key) if labels is not None and isinstance(key, str) else int(key)
                kids[str(code)] = visit(sub, rows[col == code], depth + 1)
            nd["children"] = kids
        else:
            t = float(node["threshold"])
            left, right = node["children"]
            nd["threshold"] = t
            nd["children"] = [visit(left, rows[col <= t], depth + 1), visit(right, rows[col > t], depth + 1)]
        return nd

    counter = iter(range(10**9))

    def number(nd):
        nd["id"] = next(counter)
        kids = nd.get("children")
        if kids is None:
            return
        items = kids.values() if isinstance(kids, dict) else kids
        for k in items:
            number(k)
        best = max(items, key=lambda k: k["n"])
        nd["default"] = best["id"]

    root = visit(structure, np.arange(X.shape[0]), 0)
    number(root)
    return Tree.from_dict({
        "kind": "classifier",
        "feature_names": feature_names,
        "categorical": [bool(c) for c in categorical],
        "vocabs": {str(k): v for k, v in vocabs.items()},
        "params": None,
        "root": root,
    })
