"""Random forest and second-order gradient-boosted trees."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .tree import Binner, SchemaMismatch, Tree, TreeError, TreeParams, _as_design, fit_tree


class MtryTooLarge(TreeError):
    pass


class SingleClassTarget(TreeError):
    pass


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic 64-bit child seed for ``(seed, *path)``."""
    return int(np.random.SeedSequence([int(seed) % 2**63, *map(int, path)]).generate_state(1, np.uint64)[0])


def schema_fingerprint(feature_names, categorical) -> str:
    h = hashlib.sha256()
    for name, cat in zip(feature_names, categorical):
        h.update(f"{name}:{int(bool(cat))};".encode())
    return h.hexdigest()[:16]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


class _Packed:
    """All member trees concatenated, so prediction is one compiled call."""

    def __init__(self, trees: list[Tree], categorical: np.ndarray):
        self.categorical = categorical
        sizes = np.array([t.n_nodes for t in trees], dtype=np.int64)
        slots = np.array([t.child_ids.size for t in trees], dtype=np.int64)
        self.node_offsets = (np.cumsum(sizes) - sizes).astype(np.int64)
        self.slot_offsets = (np.cumsum(slots) - slots).astype(np.int64)
        cat = lambda attr, dt: np.concatenate([getattr(t, attr) for t in trees]).astype(dt) if trees else np.zeros(0, dt)
        self.feature = cat("feature", np.int32)
        self.threshold = cat("threshold", np.float64)
        self.child_start = cat("child_start", np.int32)
        self.n_children = cat("n_children", np.int32)
        self.child_ids = cat("child_ids", np.int32)
        self.default_child = cat("default_child", np.int32)
        self.value = cat("value", np.float64)
        # member trees become views into the packed arrays
        for t, a, b in zip(trees, self.node_offsets, self.slot_offsets):
            e = a + t.n_nodes
            t.feature = self.feature[a:e]
            t.threshold = self.threshold[a:e]
            t.child_start = self.child_start[a:e]
            t.n_children = self.n_children[a:e]
            t.default_child = self.default_child[a:e]
            t.value = self.value[a:e]
            t.child_ids = self.child_ids[b : b + t.child_ids.size]

    def _arrays(self):
        return (self.categorical, self.feature, self.threshold, self.child_start, self.n_children,
                self.child_ids, self.default_child)

    def sum(self, X):
        if self.node_offsets.size == 0:
            return np.zeros(X.shape[0])
        return _kernels.predict_packed(X, *self._arrays(), self.value, self.node_offsets, self.slot_offsets)

    def apply(self, X):
        return _kernels.apply_packed(X, *self._arrays(), self.node_offsets, self.slot_offsets)


class _Ensemble:
    trees: list[Tree]
    feature_names: list[str]
    categorical: np.ndarray

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _packed(self) -> _Packed:
        if getattr(self, "_pack", None) is None:
            self._pack = _Packed(self.trees, np.asarray(self.categorical, dtype=bool))
        return self._pack

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return np.ascontiguousarray(X)

    def tree_values(self, X, idx=None) -> np.ndarray:
        """Leaf value of each member tree (all, or those in ``idx``), shape (n_rows, n_trees)."""
        X = self._check(X)
        pk = self._packed()
        nodes, slots = pk.node_offsets, pk.slot_offsets
        if idx is not None:
            idx = np.asarray(idx, dtype=np.int64)
            nodes, slots = nodes[idx], slots[idx]
        leaves = _kernels.apply_packed(X, *pk._arrays(), nodes, slots)
        return pk.value[leaves + nodes[None, :]]

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    @property
    def fingerprint(self) -> str:
        return schema_fingerprint(self.feature_names, self.categorical)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 1080
    mtry: int = 5
    tree: TreeParams = TreeParams(cost_complexity=0.0, max_depth=50, min_node=10)
    bootstrap: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry < 1:
            raise MtryTooLarge("mtry must be >= 1")


@dataclass
class Forest(_Ensemble):
    trees: list[Tree]
    per_tree_seed: list[int]
    params: ForestParams
    feature_names: list[str]
    categorical: np.ndarray
    vocabs: dict = field(default_factory=dict)
    inbag: np.ndarray | None = None

    def predict_proba(self, X) -> np.ndarray:
        """Mean of member-tree leaf probabilities."""
        X = self._check(X)
        return self._packed().sum(X) / len(self.trees)

    def link(self, total) -> np.ndarray:
        """Probability from the sum of member-tree values."""
        return np.asarray(total) / len(self.trees)

    def votes(self, X) -> np.ndarray:
        """Per-tree probabilities, shape (n_rows, n_trees)."""
        X = self._check(X)
        leaves = self._packed().apply(X)
        return np.stack([t.value[leaves[:, i]] for i, t in enumerate(self.trees)], axis=1)

    def oob_proba(self, X) -> np.ndarray:
        """Out-of-bag probability per training row (NaN if never out of bag)."""
        if self.inbag is None:
            raise ValueError("forest was fitted without bootstrap; no out-of-bag rows")
        v = self.votes(X)
        oob = ~self.inbag.T
        cnt = oob.sum(axis=1)
        s = np.where(oob, v, 0.0).sum(axis=1)
        return np.where(cnt > 0, s / np.maximum(cnt, 1), np.nan)

    def to_dict(self) -> dict:
        return {
            "model": "forest",
            "params": asdict(self.params),
            "per_tree_seed": [str(s) for s in self.per_tree_seed],
            "schema": self.fingerprint,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "Forest":
        p = d["params"]
        params = ForestParams(p["n_trees"], p["mtry"], TreeParams(**p["tree"]), p["bootstrap"])
        trees = [Tree.from_dict(t) for t in d["trees"]]
        t0 = trees[0]
        return cls(trees, [int(s) for s in d["per_tree_seed"]], params, t0.feature_names,
                   t0.categorical, t0.vocabs)


def fit_forest(X, y=None, params: ForestParams = ForestParams(), seed: int = 0, categorical=None,
               feature_names=None, jobs: int = 1) -> Forest:
    """Bagged Gini trees with ``mtry`` features sampled at every split.

    Tree i uses the seed derived from ``(seed, i)`` for both its bootstrap
    draw and its split sampling, so the result does not depend on ``jobs``.
    """
    X, y, categorical, names, vocabs = _as_design(X, y, categorical, feature_names)
    n, p = X.shape
    if params.mtry > p:
        raise MtryTooLarge(f"mtry={params.mtry} exceeds feature count {p}")
    binner = Binner().fit(X, categorical)
    codes = binner.transform(X)
    seeds = [derive_seed(seed, i) for i in range(params.n_trees)]

    def grow(i):
        if params.bootstrap:
            draws = np.random.default_rng(seeds[i]).integers(0, n, n)
            w = np.bincount(draws, minlength=n).astype(np.float64)
        else:
            w = np.ones(n)
        t = fit_tree(X, y, params.tree, seed=seeds[i], categorical=categorical, feature_names=names,
                     sample_weight=w, mtry=params.mtry, binner=binner, codes=codes)
        t.vocabs = vocabs
        return t, w > 0

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            out = list(ex.map(grow, range(params.n_trees)))
    else:
        out = [grow(i) for i in range(params.n_trees)]
    trees = [t for t, _ in out]
    inbag = np.stack([b for _, b in out]) if params.bootstrap else None
    forest = Forest(trees, seeds, params, names, categorical, vocabs, inbag)
    forest._packed()
    return forest


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 761
    learning_rate: float = 0.1
    mtry: int | None = 3
    tree: TreeParams = TreeParams(cost_complexity=0.0, max_depth=6, min_node=2)
    l2_leaf: float = 1.0
    base_score: float | None = None
    min_child_weight: float = 1.0
    colsample: str = "tree"

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.l2_leaf < 0:
            raise ValueError("l2_leaf must be >= 0")
        if self.colsample not in ("tree", "node"):
            raise ValueError("colsample must be 'tree' or 'node'")


def logistic_loss(y, score) -> float:
    """Mean negative log-likelihood of labels ``y`` under logits ``score``."""
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


@dataclass
class Gbt(_Ensemble):
    trees: list[Tree]
    learning_rate: float
    base_score: float
    params: GbtParams
    feature_names: list[str]
    categorical: np.ndarray
    vocabs: dict = field(default_factory=dict)
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = self._check(X)
        return self.base_score + self.learning_rate * self._packed().sum(X)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision_function(X))

    def link(self, total) -> np.ndarray:
        return sigmoid(self.base_score + self.learning_rate * np.asarray(total))

    def to_dict(self) -> dict:
        return {
            "model": "gbt",
            "params": asdict(self.params),
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "feature_names": self.feature_names,
            "categorical": [bool(c) for c in self.categorical],
            "schema": self.fingerprint,
            "train_loss": self.train_loss,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "Gbt":
        p = dict(d["params"])
        p["tree"] = TreeParams(**p["tree"])
        trees = [Tree.from_dict(t) for t in d["trees"]]
        return cls(trees, d["learning_rate"], d["base_score"], GbtParams(**p), list(d["feature_names"]),
                   np.array(d["categorical"], dtype=bool), {}, list(d.get("train_loss", [])))


def fit_gbt(X, y=None, params: GbtParams = GbtParams(), seed: int = 0, categorical=None,
            feature_names=None) -> Gbt:
    """Stagewise boosting of regression trees under logistic loss.

    Each stage fits a tree to the gradients ``p - y`` and hessians
    ``p(1-p)`` with leaf values ``-G/(H + l2_leaf)``, shrunk by the learning
    rate. With ``colsample="tree"`` each tree sees ``mtry`` features drawn
    without replacement; with ``"node"`` the draw happens at every split.
    A stage that would raise the training loss is halved until it does not,
    so ``train_loss`` never increases.
    """
    X, y, categorical, names, vocabs = _as_design(X, y, categorical, feature_names)
    n, p = X.shape
    pos = y.sum()
    if pos == 0 or pos == n:
        raise SingleClassTarget("boosting needs both classes in the target")
    mtry = p if params.mtry is None else int(params.mtry)
    if mtry > p or mtry < 1:
        raise MtryTooLarge(f"mtry={mtry} outside [1, {p}]")
    base = params.base_score
    if base is None:
        rate = pos / n
        base = float(np.log(rate / (1 - rate)))
    binner = Binner().fit(X, categorical)
    codes = binner.transform(X)
    score = np.full(n, base)
    losses = [logistic_loss(y, score)]
    trees = []
    tp = params.tree
    for m in range(params.n_trees):
        stage_seed = derive_seed(seed, m)
        prob = sigmoid(score)
        g = prob - y
        h = prob * (1 - prob)
        if params.colsample == "tree" and mtry < p:
            pool = np.sort(np.random.default_rng(stage_seed).choice(p, mtry, replace=False)).astype(np.int64)
            node_mtry = mtry
        else:
            pool = np.arange(p, dtype=np.int64)
            node_mtry = mtry
        (feature, threshold, _thr, child_start, n_children, child_ids, default_child,
         value, gain, cover, depth, leaf_of) = _kernels.build_regressor(
            codes, binner.n_codes, binner.categorical, binner.cuts, g, h, pool,
            tp.max_depth, tp.min_node, float(tp.cost_complexity), float(params.min_child_weight),
            float(params.l2_leaf), node_mtry, np.uint64(stage_seed))
        step = params.learning_rate * value[leaf_of]
        scale = 1.0
        new_loss = logistic_loss(y, score + step)
        while new_loss > losses[-1] and scale > 1e-8:
            scale *= 0.5
            new_loss = logistic_loss(y, score + scale * step)
        if new_loss > losses[-1]:
            scale, new_loss = 0.0, losses[-1]
        if scale != 1.0:
            value = value * scale
        score = score + scale * step
        losses.append(new_loss)
        trees.append(Tree(feature, threshold, child_start, n_children, child_ids, default_child, value,
                          np.zeros_like(value), cover, depth, categorical, names, vocabs, tp,
                          kind="regressor", gain=gain))
    assert all(b <= a for a, b in zip(losses, losses[1:])), "boosting loss increased"
    model = Gbt(trees, params.learning_rate, base, params, names, categorical, vocabs, losses)
    model._packed()
    return model


def predict_ensemble(m: Forest | Gbt, row) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size != m.n_features:
        raise SchemaMismatch(f"expected a row of {m.n_features} features")
    return float(m.predict_proba(row[None, :])[0])


def model_from_dict(d: dict):
    kind = d.get("model")
    if kind == "forest":
        return Forest.from_dict(d)
    if kind == "gbt":
        return Gbt.from_dict(d)
    raise ValueError(f"unknown model kind {kind!r}")


def model_to_json(m) -> str:
    return json.dumps(m.to_dict())
