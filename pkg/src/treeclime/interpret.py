"""Feature importance (impurity and permutation) and partial dependence."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .data import parse_spei_column
from .ensemble import Forest, Gbt
from .evaluation import SingleClass, evaluate_scores, roc_auc
from .tree import Tree


class UntrainedModel(ValueError):
    pass


class CyclicStructure(ValueError):
    pass


class MetricUndefined(ValueError):
    pass


class UnknownFeature(KeyError):
    pass


@dataclass
class ImportanceReport:
    """Feature name -> importance, plus per-repeat deltas for permutation runs."""

    method: str
    entries: dict[str, float]
    deltas: dict[str, list[float]] = field(default_factory=dict)

    def ranked(self) -> list[tuple[str, float]]:
        """Entries sorted by importance, descending; name breaks ties."""
        return sorted(self.entries.items(), key=lambda kv: (-kv[1], kv[0]))

    def top(self, k: int) -> list[str]:
        return [name for name, _ in self.ranked()[:k]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        reps = max((len(v) for v in self.deltas.values()), default=0)
        w.writerow(["feature", "importance", *(f"repeat{r + 1}" for r in range(reps))])
        for name, val in self.ranked():
            w.writerow([name, f"{val:.10f}", *(f"{d:.10f}" for d in self.deltas.get(name, []))])
        return buf.getvalue()


def _trees(model) -> list[Tree]:
    if isinstance(model, Tree):
        return [model]
    if isinstance(model, (Forest, Gbt)):
        return list(model.trees)
    raise UntrainedModel(f"no tree structure on {type(model).__name__}")


def impurity_importance(model) -> ImportanceReport:
    """Sum of per-node impurity decreases by split feature, normalised to 1.

    Classification trees use ``n * (G(parent) - weighted G(children))``;
    boosting trees use the second-order split gain.
    """
    trees = _trees(model)
    names = model.feature_names
    total = np.zeros(len(names))
    for t in trees:
        g = t.node_gains()
        inner = t.feature >= 0
        np.add.at(total, t.feature[inner], g[inner])
    s = total.sum()
    vals = total / s if s > 0 else total
    return ImportanceReport("impurity", {n: float(v) for n, v in zip(names, vals)})


def node_share_importance(nodes: list[dict]) -> ImportanceReport:
    """Node-importance arithmetic from externally supplied contributions.

    Each node is a dict with an optional ``feature`` (split nodes only),
    ``w`` (count) and ``c`` (contribution), ``children`` (indices into
    ``nodes``) and optionally a precomputed ``n``. For a split node without
    ``n``, ``n = w*c - sum(w_k*c_k)`` over its children. The importance of
    feature f is the sum of ``n`` over its nodes divided by the sum over all
    split nodes.
    """
    m = len(nodes)
    state = [0] * m  # 0 new, 1 on stack, 2 done

    def visit(i):
        if state[i] == 1:
            raise CyclicStructure(f"node {i} is its own descendant")
        if state[i] == 2:
            return
        state[i] = 1
        for k in nodes[i].get("children", ()):
            if not 0 <= k < m:
                raise IndexError(f"node {i} names missing child {k}")
            visit(k)
        state[i] = 2

    for i in range(m):
        visit(i)
    n_val = {}
    for i, nd in enumerate(nodes):
        if nd.get("feature") is None:
            continue
        if "n" in nd:
            n_val[i] = float(nd["n"])
        else:
            kids = nd.get("children", ())
            n_val[i] = nd["w"] * nd["c"] - sum(nodes[k]["w"] * nodes[k]["c"] for k in kids)
    denom = sum(n_val.values())
    per = {}
    for i, v in n_val.items():
        f = nodes[i]["feature"]
        per[f] = per.get(f, 0.0) + v
    if not n_val:
        return ImportanceReport("node_share", {})
    if len(n_val) == 1:
        return ImportanceReport("node_share", {f: 1.0 for f in per})
    if denom == 0:
        raise ZeroDivisionError("node contributions sum to zero")
    return ImportanceReport("node_share", {f: v / denom for f, v in per.items()})


def _metric(name):
    if name == "auc":
        def f(y, p):
            try:
                return roc_auc(y, p)
            except SingleClass as e:
                raise MetricUndefined(str(e)) from None
        return f
    if name == "accuracy":
        return lambda y, p: evaluate_scores(y, p)["accuracy"]
    raise ValueError(f"unknown metric {name!r}")


def permutation_importance(model, X, y, metric: str = "auc", n_repeats: int = 5, seed: int = 0,
                           feature_names=None) -> ImportanceReport:
    """Mean drop in ``metric`` when one column is shuffled.

    The shuffle for (feature j, repeat r) is drawn from a generator seeded
    by ``(seed, j, r)``. Features the model never uses score exactly 0
    without being re-evaluated. For tree ensembles only the member trees
    that split on the shuffled feature are re-run.
    """
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    names = feature_names or getattr(model, "feature_names", None) or [f"x{j}" for j in range(X.shape[1])]
    score = _metric(metric)
    used = model.used_features() if hasattr(model, "used_features") else set(range(X.shape[1]))
    if isinstance(model, (Forest, Gbt)):
        values = model.tree_values(X)
        total = values.sum(axis=1)
        trees_of = {j: [i for i, t in enumerate(model.trees) if j in t.used_features()] for j in used}

        def predict_with(j, Xp):
            idx = trees_of[j]
            return model.link(total - values[:, idx].sum(axis=1) + model.tree_values(Xp, idx).sum(axis=1))

        base = score(y, model.link(total))
    else:
        def predict_with(j, Xp):
            return model.predict_proba(Xp)

        base = score(y, model.predict_proba(X))
    entries, deltas = {}, {}
    Xp = X.copy()
    for j, name in enumerate(names):
        if j not in used:
            d = [0.0] * n_repeats
        else:
            d = []
            for r in range(n_repeats):
                perm = np.random.default_rng([seed, j, r]).permutation(X.shape[0])
                Xp[:, j] = X[perm, j]
                d.append(float(base - score(y, predict_with(j, Xp))))
            Xp[:, j] = X[:, j]
        entries[name] = float(np.mean(d))
        deltas[name] = d
    return ImportanceReport("permutation", entries, deltas)


@dataclass
class PDSeries:
    feature: str
    values: np.ndarray
    pd: np.ndarray
    n_background: int
    response: str = "proba"

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.pd.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "pd"])
        for v, p in self.points:
            w.writerow([f"{v:.10g}", f"{p:.10f}"])
        return buf.getvalue()


def partial_dependence(model, X, feature, values=None, feature_names=None, response: str = "proba",
                       threshold: float = 0.5) -> PDSeries:
    """Average model response with ``feature`` forced to each value in turn.

    ``response="proba"`` averages predicted probabilities; ``"label"``
    averages thresholded Yes/No predictions (probability >= threshold).
    ``values`` defaults to the distinct background values of the feature.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("background set is empty")
    names = feature_names or getattr(model, "feature_names", None) or [f"x{j}" for j in range(X.shape[1])]
    if isinstance(feature, str):
        if feature not in names:
            raise UnknownFeature(feature)
        j = names.index(feature)
    else:
        j = int(feature)
        if not 0 <= j < X.shape[1]:
            raise UnknownFeature(feature)
    if values is None:
        col = X[:, j]
        values = np.unique(col[~np.isnan(col)])
    values = np.asarray(values, dtype=np.float64)
    if response not in ("proba", "label"):
        raise ValueError("response must be 'proba' or 'label'")
    Xv = X.copy()
    out = np.empty(values.size)
    for i, v in enumerate(values):
        Xv[:, j] = v
        p = model.predict_proba(Xv)
        out[i] = np.mean(p >= threshold) if response == "label" else np.mean(p)
    return PDSeries(names[j], values, out, X.shape[0], response)


GRID_HEADER = ["timescale", "lag", "importance"]


def spei_lag_grid(report: ImportanceReport) -> list[tuple[int, int, float]]:
    """(timescale, lag, importance) for every lagged drought-index feature."""
    rows = []
    for name, val in report.entries.items():
        key = parse_spei_column(name)
        if key is not None:
            rows.append((key[0], key[1], val))
    return sorted(rows)


def grid_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_HEADER)
    for t, lag, v in rows:
        w.writerow([t, lag, f"{v:.10f}"])
    return buf.getvalue()
