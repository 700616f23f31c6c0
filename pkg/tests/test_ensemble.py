import json

import numpy as np
import pytest

from treeclime.ensemble import (Forest, ForestParams, Gbt, GbtParams, MtryTooLarge, SingleClassTarget,
                                fit_forest, fit_gbt, logistic_loss, model_from_dict, model_to_json,
                                predict_ensemble, sigmoid)
from treeclime.tree import TreeParams


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(600, 6))
    eta = 1.5 * X[:, 0] - X[:, 1] + np.sin(2 * X[:, 2])
    y = (rng.random(600) < sigmoid(eta)).astype(float)
    return X, y


def test_forest_is_mean_of_trees(data):
    X, y = data
    f = fit_forest(X, y, ForestParams(25, 2), seed=1)
    assert f.predict_proba(X) == pytest.approx(f.votes(X).mean(axis=1))
    assert f.predict_proba(X) == pytest.approx(np.mean([t.predict_proba(X) for t in f.trees], axis=0))


def test_forest_single_tree_matches_its_member(data):
    X, y = data
    f = fit_forest(X, y, ForestParams(1, 6, bootstrap=False), seed=3)
    assert np.array_equal(f.predict_proba(X), f.trees[0].predict_proba(X))


def test_forest_deterministic_across_jobs(data):
    X, y = data
    a = fit_forest(X, y, ForestParams(30, 2), seed=5, jobs=1)
    b = fit_forest(X, y, ForestParams(30, 2), seed=5, jobs=4)
    assert model_to_json(a) == model_to_json(b)
    c = fit_forest(X, y, ForestParams(30, 2), seed=6)
    assert model_to_json(a) != model_to_json(c)


def test_forest_oob_and_errors(data):
    X, y = data
    f = fit_forest(X, y, ForestParams(40, 2), seed=0)
    oob = f.oob_proba(X)
    assert np.isfinite(oob).mean() > 0.95
    with pytest.raises(MtryTooLarge):
        fit_forest(X, y, ForestParams(5, 7))


def test_forest_roundtrip(data):
    X, y = data
    f = fit_forest(X, y, ForestParams(10, 3), seed=2)
    back = model_from_dict(json.loads(model_to_json(f)))
    assert isinstance(back, Forest)
    assert np.array_equal(back.predict_proba(X), f.predict_proba(X))
    assert predict_ensemble(back, X[0]) == pytest.approx(f.predict_proba(X[:1])[0])


def test_gbt_no_trees_gives_base_rate():
    X = np.zeros((10, 2))
    y = np.array([1.0] * 9 + [0.0])
    m = fit_gbt(X, y, GbtParams(n_trees=0, mtry=2))
    assert m.predict_proba(X) == pytest.approx(np.full(10, 0.9))
    z = fit_gbt(X, y, GbtParams(n_trees=0, mtry=2, base_score=0.0))
    assert z.predict_proba(X)[0] == 0.5


def test_gbt_loss_non_increasing_and_improves(data):
    X, y = data
    m = fit_gbt(X, y, GbtParams(100, 0.3, None, TreeParams(0.0, 3, 2)), seed=0)
    d = np.diff(m.train_loss)
    assert (d <= 0).all()
    assert m.train_loss[-1] < m.train_loss[0] - 0.1
    assert logistic_loss(y, m.decision_function(X)) == pytest.approx(m.train_loss[-1])


def test_gbt_aggressive_rate_still_monotone(data):
    X, y = data
    m = fit_gbt(X, y, GbtParams(30, 1.0, 6, TreeParams(0.0, 6, 1), l2_leaf=0.0, min_child_weight=0.0), seed=1)
    assert all(b <= a for a, b in zip(m.train_loss, m.train_loss[1:]))


def test_gbt_roundtrip_and_errors(data):
    X, y = data
    m = fit_gbt(X, y, GbtParams(20, 0.1, 3), seed=4)
    back = model_from_dict(json.loads(model_to_json(m)))
    assert isinstance(back, Gbt)
    assert np.array_equal(back.predict_proba(X), m.predict_proba(X))
    with pytest.raises(SingleClassTarget):
        fit_gbt(X, np.ones(len(y)), GbtParams(5))
    with pytest.raises(MtryTooLarge):
        fit_gbt(X, y, GbtParams(5, mtry=9))
    with pytest.raises(ValueError):
        GbtParams(learning_rate=0.0)


def test_gbt_beats_single_shallow_tree(data):
    X, y = data
    from treeclime.evaluation import roc_auc
    from treeclime.tree import fit_tree
    Xt, yt, Xv, yv = X[:400], y[:400], X[400:], y[400:]
    g = fit_gbt(Xt, yt, GbtParams(200, 0.1, 6, TreeParams(0.0, 2, 2)), seed=0)
    t = fit_tree(Xt, yt, TreeParams(0.0, 2, 2))
    assert roc_auc(yv, g.predict_proba(Xv)) > roc_auc(yv, t.predict_proba(Xv))
