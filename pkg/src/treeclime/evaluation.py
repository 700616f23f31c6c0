"""Classification metrics, k-fold splitting, cross-validation and paired t-tests."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .data import Dataset

METRICS = ("accuracy", "precision", "recall", "auc")


class LengthMismatch(ValueError):
    pass


class SingleClass(ValueError):
    pass


class KTooLarge(ValueError):
    pass


class DegenerateDifferences(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _pair(y, probs):
    y = np.asarray(y, dtype=np.float64).ravel()
    probs = np.asarray(probs, dtype=np.float64).ravel()
    if y.shape != probs.shape:
        raise LengthMismatch(f"{y.size} labels but {probs.size} scores")
    return y, probs


def confusion_matrix(y, probs, threshold: float = 0.5) -> ConfusionMatrix:
    """Counts with ``prob >= threshold`` predicted positive."""
    y, probs = _pair(y, probs)
    pred = probs >= threshold
    pos = y == 1
    return ConfusionMatrix(int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
                           int(np.sum(~pred & pos)), int(np.sum(~pred & ~pos)))


def classification_metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision and recall; NaN where a denominator is zero."""
    def ratio(a, b):
        return a / b if b else float("nan")

    return {
        "accuracy": ratio(cm.tp + cm.tn, cm.total),
        "precision": ratio(cm.tp, cm.tp + cm.fp),
        "recall": ratio(cm.tp, cm.tp + cm.fn),
    }


def roc_auc(y, probs) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    y, probs = _pair(y, probs)
    pos = y == 1
    n1 = int(pos.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise SingleClass("AUC needs both classes")
    order = np.argsort(probs, kind="mergesort")
    s = probs[order]
    ranks = np.empty(y.size)
    # average ranks over tied groups
    bounds = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [s.size]])
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def evaluate_scores(y, probs, threshold: float = 0.5) -> dict:
    out = classification_metrics(confusion_matrix(y, probs, threshold))
    try:
        out["auc"] = roc_auc(y, probs)
    except SingleClass:
        out["auc"] = float("nan")
    return out


def kfold_split(n: int, k: int, seed=None, stratify_on=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """k disjoint test folds covering ``range(n)``; each train set is the rest.

    ``seed=None`` keeps row order and cuts contiguous folds. Otherwise rows
    are shuffled; with ``stratify_on`` each class is shuffled separately and
    dealt round-robin (positives first, negatives continuing from the next
    fold) so fold sizes and per-fold positive counts each differ by <= 1.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise KTooLarge(f"k={k} exceeds n={n}")
    rng = None if seed is None else np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    if stratify_on is None:
        order = np.arange(n) if rng is None else rng.permutation(n)
        sizes = np.full(k, n // k)
        sizes[: n % k] += 1
        fold_of[order] = np.repeat(np.arange(k), sizes)
    else:
        s = np.asarray(stratify_on)
        if s.shape != (n,):
            raise LengthMismatch("stratify_on must have n entries")
        nxt = 0
        for cls in (1, 0):
            idx = np.flatnonzero(s == cls) if cls == 1 else np.flatnonzero(s != 1)
            if rng is not None:
                idx = rng.permutation(idx)
            fold_of[idx] = (nxt + np.arange(idx.size)) % k
            nxt = (nxt + idx.size) % k
    rows = np.arange(n)
    return [(rows[fold_of != i], rows[fold_of == i]) for i in range(k)]


@dataclass
class FoldResults:
    """Per-fold metrics; ``records[i]`` is fold ``i``."""

    records: list[dict]
    label: str = ""
    predictions: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return len(self.records)

    def metric(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def mean(self, name: str) -> float:
        return float(np.nanmean(self.metric(name)))

    def summary(self) -> dict:
        return {m: round(self.mean(m), 10) for m in METRICS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "fold", *METRICS])
        for r in self.records:
            w.writerow([self.label, r["fold"], *(f"{r[m]:.10f}" for m in METRICS)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"label": self.label, "k": self.k, "folds": self.records, "mean": self.summary()},
                          indent=2, sort_keys=True)


def _run_fold(learner, ds: Dataset, fold: int, train, test, seed: int):
    fitted = learner.fit(ds.take(train), seed=seed)
    te = ds.take(test)
    probs = fitted.predict_proba(te)
    rec = {"fold": fold, **evaluate_scores(te.y(), probs)}
    return rec, probs


def cross_validate(learner, ds: Dataset, k: int = 10, seed: int = 0, jobs: int = 1, label: str = "",
                   folds=None) -> FoldResults:
    """Stratified k-fold evaluation; preprocessing is fitted inside each training fold.

    Folds depend only on ``(n, k, seed)`` and the target, so different
    learners on the same data see the same splits. Each fold trains with
    seed ``seed + fold``.
    """
    y = ds.y()
    if folds is None:
        folds = kfold_split(ds.n_rows, k, seed, stratify_on=y)
    tasks = [delayed(_run_fold)(learner, ds, i, tr, te, seed + i) for i, (tr, te) in enumerate(folds)]
    out = Parallel(n_jobs=jobs, prefer="threads")(tasks) if jobs > 1 else [t[0](*t[1], **t[2]) for t in tasks]
    out = sorted(out, key=lambda r: r[0]["fold"])
    return FoldResults([r for r, _ in out], label, [p for _, p in out])


# -- paired t-test --------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 500):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)`` by continued fraction."""
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    if x < (a + 1) / (a + b + 2):
        return math.exp(lbt) * _betacf(a, b, x) / a
    return 1.0 - math.exp(lbt) * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


def paired_t_test(a, b, alpha: float = 0.05) -> dict:
    """Paired Student t on ``d = a - b`` with a two-sided p-value.

    ``direction`` is ``"a>b"`` or ``"a<b"`` when p < alpha, else ``"a~b"``.
    Identical inputs give t = 0, p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch("paired samples differ in length")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0:
        if mean == 0:
            return {"t": 0.0, "p": 1.0, "direction": "a~b", "mean_diff": 0.0, "n": n}
        raise DegenerateDifferences("differences are constant and nonzero; t is unbounded")
    t = mean / (sd / math.sqrt(n))
    p = t_two_sided_p(t, n - 1)
    direction = "a~b"
    if p < alpha:
        direction = "a>b" if t > 0 else "a<b"
    return {"t": t, "p": p, "direction": direction, "mean_diff": mean, "n": n}


def ttest_header(name_a: str = "ALL", name_b: str = "GWP") -> list[str]:
    return ["metric", "move", f"mean.{name_a}", f"mean.{name_b}", "t.value", "p.value", "comparison"]


def comparison_rows(a: FoldResults, b: FoldResults, move: str, name_a: str = "ALL", name_b: str = "GWP") -> list[list]:
    """One row per metric: paired test of arm ``a`` against arm ``b``."""
    rows = []
    for m in METRICS:
        xa, xb = a.metric(m), b.metric(m)
        keep = ~(np.isnan(xa) | np.isnan(xb))
        try:
            res = paired_t_test(xa[keep], xb[keep])
            t, p = res["t"], res["p"]
            sym = {"a>b": ">", "a<b": "<", "a~b": "~"}[res["direction"]]
        except (DegenerateDifferences, ValueError):
            t, p, sym = float("nan"), float("nan"), "?"
        ma, mb = (float(np.mean(x[keep])) if keep.any() else float("nan") for x in (xa, xb))
        rows.append([m, move, f"{ma:.4f}", f"{mb:.4f}", f"{t:.4f}", f"{p:.4f}",
                     f"{name_a} {sym} {name_b}"])
    return rows


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
