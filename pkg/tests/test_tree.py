import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treeclime.tree import (EmptyDataset, EmptyNode, SchemaMismatch, Tree, TreeParams, fit_tree,
                            gini_impurity, predict_tree)

from conftest import TOY_FEATURES, TOY_TREE_PROBS
from oracle import best_root

OPEN = TreeParams(0.0, 30, 2)


def test_gini_values():
    assert gini_impurity(2, 1) == pytest.approx(4 / 9)
    assert gini_impurity(5, 0) == 0.0
    assert gini_impurity(3, 3) == pytest.approx(0.5)
    with pytest.raises(EmptyNode):
        gini_impurity(0, 0)


@given(st.integers(0, 500), st.integers(0, 500))
def test_gini_bounds_and_symmetry(a, b):
    if a + b == 0:
        return
    g = gini_impurity(a, b)
    assert 0.0 <= g <= 0.5 + 1e-12
    assert g == pytest.approx(gini_impurity(b, a))


def test_fixed_tree_predictions(toy, toy_tree):
    probs = toy_tree.predict_proba(toy_X_of(toy))
    assert probs.tolist() == pytest.approx(TOY_TREE_PROBS)


def toy_X_of(toy):
    from treeclime.data import encode_categorical
    return encode_categorical(toy, TOY_FEATURES)[0]


def test_learned_toy_root_is_drought(toy):
    t = fit_tree(toy, params=OPEN)
    assert t.feature_names[t.feature[0]] == "drought"
    kids = [t.child_ids[t.child_start[0] + j] for j in range(t.n_children[0])]
    weighted = sum(t.n_tot[c] * gini_impurity(t.n_yes[c], t.n_tot[c] - t.n_yes[c]) for c in kids) / t.n_tot[0]
    assert weighted == pytest.approx(32 / 98, abs=1e-12)


def test_single_row_and_constant_target():
    t = fit_tree(np.array([[1.0, 2.0]]), np.array([1.0]), OPEN)
    assert t.n_nodes == 1 and t.value[0] == 1.0
    X = np.arange(20.0).reshape(10, 2)
    t = fit_tree(X, np.zeros(10), OPEN)
    assert t.n_nodes == 1 and t.value[0] == 0.0


def test_errors():
    with pytest.raises(EmptyDataset):
        fit_tree(np.empty((0, 2)), np.empty(0), OPEN)
    t = fit_tree(np.arange(20.0).reshape(10, 2), np.tile([0.0, 1.0], 5), OPEN)
    with pytest.raises(SchemaMismatch):
        t.predict_proba(np.zeros((1, 3)))
    with pytest.raises(SchemaMismatch):
        predict_tree(t, [1.0])
    with pytest.raises(ValueError):
        TreeParams(min_node=0)


def test_zero_importance_feature_and_pure_split():
    rng = np.random.default_rng(0)
    x = rng.random(200)
    X = np.column_stack([x, np.zeros(200)])
    y = (x > 0.5).astype(float)
    t = fit_tree(X, y, OPEN)
    assert t.used_features() == {0}
    assert t.n_nodes == 3
    assert abs(t.threshold[0] - 0.5) < 0.05


def test_min_node_and_depth_limits():
    rng = np.random.default_rng(1)
    X = rng.random((500, 4))
    y = (rng.random(500) < 0.5).astype(float)
    t = fit_tree(X, y, TreeParams(0.0, 3, 2))
    assert t.max_depth <= 3
    t = fit_tree(X, y, TreeParams(0.0, 30, 50))
    parents = t.feature >= 0
    assert (t.n_tot[parents] >= 50).all()


def test_cost_complexity_prunes():
    rng = np.random.default_rng(2)
    X = rng.random((400, 5))
    y = (rng.random(400) < 0.5).astype(float)
    loose = fit_tree(X, y, TreeParams(0.0, 30, 2))
    tight = fit_tree(X, y, TreeParams(0.05, 30, 2))
    assert tight.n_nodes < loose.n_nodes


def test_missing_values_go_to_larger_child():
    X = np.array([[0.0], [0.1], [0.2], [1.0], [1.1], [np.nan]])
    y = np.array([0, 0, 0, 1, 1, 1.0])
    t = fit_tree(X[:5], y[:5], TreeParams(0.0, 5, 1))
    assert t.predict_proba(X[5:])[0] == 0.0


def test_json_roundtrip_is_exact():
    rng = np.random.default_rng(3)
    X = rng.random((300, 3))
    X[:, 2] = rng.integers(0, 4, 300)
    y = (X[:, 0] + (X[:, 2] == 1) > 0.9).astype(float)
    t = fit_tree(X, y, OPEN, categorical=[False, False, True])
    back = Tree.from_dict(json.loads(t.to_json()))
    assert Tree.from_dict(json.loads(back.to_json())).to_json() == back.to_json()
    assert np.array_equal(back.predict_proba(X), t.predict_proba(X))


def test_leaf_paths_partition_rows():
    rng = np.random.default_rng(4)
    X = rng.random((300, 3))
    y = (rng.random(300) < X[:, 0]).astype(float)
    t = fit_tree(X, y, TreeParams(0.0, 4, 5))
    leaf_ids = [leaf for _, leaf in t.paths()]
    assert sorted(leaf_ids) == sorted(t.leaves.tolist())
    assert len(t.rules()) == len(leaf_ids)
    assert t.n_tot[t.leaves].sum() == 300


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 201))
    p = int(rng.integers(2, 9))
    cat = rng.random(p) < 0.3
    X = np.empty((n, p))
    for j in range(p):
        X[:, j] = rng.integers(0, int(rng.integers(2, 6)), n) if cat[j] else np.round(rng.normal(size=n), 2)
    y = (rng.random(n) < 1 / (1 + np.exp(-X[:, 0]))).astype(float)
    return X, y, cat


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_root_matches_brute_force(seed):
    X, y, cat = _random_case(seed)
    t = fit_tree(X, y, TreeParams(0.0, 1, 1), categorical=cat)
    g, j, thr = best_root(X, y, cat)
    assert int(t.feature[0]) == j
    if j >= 0 and not cat[j]:
        assert t.threshold[0] == pytest.approx(thr)
