import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from treeclime.data import BINARY, TARGET, Column, Dataset
from treeclime.evaluation import (ConfusionMatrix, DegenerateDifferences, KTooLarge, LengthMismatch,
                                  SingleClass, classification_metrics, comparison_rows, confusion_matrix,
                                  cross_validate, kfold_split, paired_t_test, roc_auc, t_two_sided_p)
from treeclime.pipeline import Learner

from conftest import TOY_TREE_PROBS, toy_dataset

TOY_Y = toy_dataset().y()


def test_toy_confusion_and_metrics():
    cm = confusion_matrix(TOY_Y, TOY_TREE_PROBS)
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (4, 1, 2, 7)
    m = classification_metrics(cm)
    assert m["precision"] == pytest.approx(0.80)
    assert m["recall"] == pytest.approx(2 / 3)
    assert m["accuracy"] == pytest.approx(11 / 14)


def test_toy_auc_exact():
    assert roc_auc(TOY_Y, TOY_TREE_PROBS) == pytest.approx(42.5 / 48, abs=1e-12)


def test_metric_edge_cases():
    m = classification_metrics(ConfusionMatrix(0, 0, 0, 5))
    assert m["accuracy"] == 1.0 and math.isnan(m["precision"])
    assert classification_metrics(ConfusionMatrix(1, 1, 1, 1)) == {"accuracy": 0.5, "precision": 0.5, "recall": 0.5}
    assert confusion_matrix([1, 1], [1.0, 1.0]) == ConfusionMatrix(2, 0, 0, 0)
    assert roc_auc([0, 1, 0, 1], [0.1, 0.9, 0.2, 0.8]) == 1.0
    assert roc_auc([0, 1, 0, 1], [0.3] * 4) == 0.5
    with pytest.raises(SingleClass):
        roc_auc([1, 1], [0.2, 0.4])
    with pytest.raises(LengthMismatch):
        confusion_matrix([1, 0], [0.5])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1000).map(lambda v: v / 1000)), min_size=2, max_size=40)
       .filter(lambda r: len({a for a, _ in r}) == 2))
def test_auc_properties(rows):
    y = np.array([a for a, _ in rows], dtype=float)
    p = np.array([b for _, b in rows])
    auc = roc_auc(y, p)
    assert auc == pytest.approx(roc_auc(y, np.exp(3 * p) - 7))
    assert auc + roc_auc(y, -p) == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(1, 50))
def test_metrics_roundtrip_from_rates(tp, fp, fn, tn):
    cm = ConfusionMatrix(tp, fp, fn, tn)
    m = classification_metrics(cm)
    if tp + fp and tp + fn:
        tp2 = round(m["recall"] * (tp + fn))
        fp2 = round(tp2 / m["precision"] - tp2) if tp2 else fp
        assert (tp2, fp2) == (tp, fp) or tp == 0


def test_kfold_examples():
    loo = kfold_split(10, 10)
    assert loo[1][1].tolist() == [1]
    folds = kfold_split(100, 10, seed=3)
    tests = [te for _, te in folds]
    assert all(t.size == 10 for t in tests)
    assert sorted(np.concatenate(tests).tolist()) == list(range(100))
    y = np.zeros(100)
    y[:30] = 1
    strat = kfold_split(100, 10, seed=1, stratify_on=y)
    assert [int(y[te].sum()) for _, te in strat] == [3] * 10
    with pytest.raises(KTooLarge):
        kfold_split(5, 6)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 200), st.integers(2, 20), st.integers(0, 1000))
def test_kfold_partition(n, k, seed):
    if k > n:
        return
    folds = kfold_split(n, k, seed)
    tests = [te for _, te in folds]
    assert sorted(np.concatenate(tests).tolist()) == list(range(n))
    sizes = [t.size for t in tests]
    assert max(sizes) - min(sizes) <= 1
    for tr, te in folds:
        assert tr.size + te.size == n and not set(tr) & set(te)


def test_t_distribution_matches_scipy():
    for t, df in [(0.3, 1), (2.0, 2), (3.4641, 2), (1.7, 9), (5.0, 30), (-2.2, 4)]:
        assert t_two_sided_p(t, df) == pytest.approx(2 * stats.t.sf(abs(t), df), abs=1e-8)


def test_paired_t_examples():
    r = paired_t_test([1, 2, 3], [0, 0, 0])
    assert r["t"] == pytest.approx(3.4641, abs=1e-4)
    assert r["p"] == pytest.approx(0.0742, abs=1e-4)
    assert r["direction"] == "a~b"
    same = paired_t_test([0.5, 0.6], [0.5, 0.6])
    assert same["t"] == 0 and same["direction"] == "a~b"
    rng = np.random.default_rng(0)
    b = rng.random(10)
    d = 0.02 + 0.005 * rng.standard_normal(10)
    r = paired_t_test(b + d, b)
    assert r["p"] < 0.001 and r["direction"] == "a>b"
    with pytest.raises(DegenerateDifferences):
        paired_t_test([1.0, 2.0], [0.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=12), st.integers(0, 100))
def test_paired_t_antisymmetric(a, seed):
    b = np.random.default_rng(seed).random(len(a))
    a = np.asarray(a)
    if np.std(a - b) < 1e-9:
        return
    r1, r2 = paired_t_test(a, b), paired_t_test(b, a)
    assert r1["t"] == pytest.approx(-r2["t"])
    flip = {"a>b": "a<b", "a<b": "a>b", "a~b": "a~b"}
    assert r2["direction"] == flip[r1["direction"]]


def _binary_ds(n=300, rate=0.3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n).astype(float)
    y = np.zeros(n)
    y[: int(rate * n)] = 1
    return Dataset((Column("x", BINARY, x), Column("move", TARGET, y)))


def test_majority_baseline_cv_and_determinism():
    ds = _binary_ds()
    res = cross_validate(Learner("MAJ"), ds, k=10, seed=0)
    assert res.mean("accuracy") == pytest.approx(0.70, abs=0.01)
    assert res.mean("auc") == pytest.approx(0.5)
    again = cross_validate(Learner("MAJ"), ds, k=10, seed=0)
    assert res.to_csv() == again.to_csv()
    par = cross_validate(Learner("DT"), ds, k=5, seed=2, jobs=3)
    seq = cross_validate(Learner("DT"), ds, k=5, seed=2, jobs=1)
    assert par.to_csv() == seq.to_csv()


def test_comparison_rows_layout():
    ds = _binary_ds()
    a = cross_validate(Learner("MAJ"), ds, k=5, seed=0)
    b = cross_validate(Learner("LR"), ds, k=5, seed=0)
    rows = comparison_rows(b, a, "general", "LR", "MAJ")
    assert [r[0] for r in rows] == ["accuracy", "precision", "recall", "auc"]
    assert all(r[-1].startswith("LR ") and r[-1].endswith(" MAJ") for r in rows)
