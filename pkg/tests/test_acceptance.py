"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Timings exclude the one-off JIT compilation of the tree kernels, which the
``warm`` fixture triggers before any clock starts.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from treeclime.baseline import log_likelihood, log_likelihood_gradient
from treeclime.data import BINARY, TARGET, Column, Dataset, encode_categorical, join_and_lag
from treeclime.ensemble import GbtParams, fit_forest, fit_gbt, ForestParams
from treeclime.evaluation import (classification_metrics, confusion_matrix, cross_validate, kfold_split,
                                  paired_t_test, roc_auc)
from treeclime.experiment import steps_for
from treeclime.hpo import Dim, SearchSpace, bho_optimize, random_search
from treeclime.interpret import (impurity_importance, node_share_importance, partial_dependence,
                                 permutation_importance)
from treeclime.pipeline import KEEP_ALL, Learner
from treeclime.preprocess import discretize_equal_width
from treeclime.synth import SynthConfig, generate, true_probability
from treeclime.tree import TreeParams, build_fixed_tree, fit_tree, gini_impurity

from conftest import ACCEPTANCE, TOY_FEATURES, TOY_TREE, TOY_TREE_PROBS, toy_dataset
from oracle import best_root

GBT_LOSSES: list[list[float]] = []


def record(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module", autouse=True)
def warm():
    rng = np.random.default_rng(0)
    X = rng.random((60, 3))
    X[:, 2] = rng.integers(0, 3, 60)
    y = (rng.random(60) < 0.5).astype(float)
    cat = [False, False, True]
    fit_tree(X, y, TreeParams(0.0, 3, 2), categorical=cat).predict_proba(X)
    f = fit_forest(X, y, ForestParams(2, 2), categorical=cat)
    f.predict_proba(X)
    f.tree_values(X)
    g = fit_gbt(X, y, GbtParams(2, mtry=2), categorical=cat)
    g.predict_proba(X)


# -- 1: worked toy-example fixtures ----------------------------------------------

NODE_FIXTURE = [
    {"feature": "age", "w": 14, "c": -86, "children": [1, 2, 3]},
    {"feature": "drought", "w": 5, "c": -8, "n": -18},
    {"w": 5, "c": -8},
    {"feature": "mabr", "w": 4, "c": -4, "n": -8},
]


def test_c01_toy_fixtures():
    t0 = time.perf_counter()
    toy = toy_dataset()
    y = toy.y()
    tree = build_fixed_tree(TOY_TREE, toy)
    X, _, _ = encode_categorical(toy, TOY_FEATURES)
    probs = tree.predict_proba(X)
    cm = confusion_matrix(y, probs)
    m = classification_metrics(cm)
    auc = roc_auc(y, probs)
    mabr = TOY_FEATURES.index("mabr")
    vocab = tree.vocabs[mabr]
    pd = partial_dependence(tree, X, "mabr", [vocab.index("yes"), vocab.index("no")], response="label").pd
    i_age = node_share_importance(NODE_FIXTURE).entries["age"]
    dt = time.perf_counter() - t0
    checks = {
        "probs": np.allclose(probs, TOY_TREE_PROBS),
        "cm": (cm.tp, cm.fp, cm.fn, cm.tn) == (4, 1, 2, 7),
        "precision": abs(m["precision"] - 0.80) <= 0.005,
        "recall": abs(m["recall"] - 0.6667) <= 0.005,
        "accuracy": abs(m["accuracy"] - 0.7857) <= 0.005,
        "auc": abs(auc - 42.5 / 48) < 1e-12 and abs(auc - 0.8854) <= 0.005,
        "pd_yes": abs(pd[0] - 0.50) <= 0.005,
        "pd_no": abs(pd[1] - 0.2143) <= 0.005,
        "i_age": abs(i_age - 0.977) <= 1e-3,
        "time": dt < 1.0,
    }
    record(1, all(checks.values()),
           f"cm=({cm.tp},{cm.fp},{cm.fn},{cm.tn}) P={m['precision']:.4f} R={m['recall']:.4f} "
           f"A={m['accuracy']:.4f} AUC={auc:.4f} pd=({pd[0]:.4f},{pd[1]:.4f}) I_age={i_age:.4f} "
           f"t={dt:.3f}s failed={[k for k, v in checks.items() if not v]}")


# -- 2: equal-width drought-index bins -------------------------------------------

def test_c02_discretization():
    t0 = time.perf_counter()
    vals = [0.434, 0.806, -0.271, 0.131, -0.722, -0.288]
    bins = (discretize_equal_width(vals, 7).assign(vals) + 1).tolist()
    dt = time.perf_counter() - t0
    record(2, bins == [6, 7, 3, 4, 1, 2] and dt < 1.0, f"bins={bins} t={dt:.3f}s")


# -- 3: root split against exhaustive enumeration --------------------------------

def _oracle_case(seed):
    rng = np.random.default_rng([3, seed])
    n = int(rng.integers(20, 201))
    p = int(rng.integers(1, 9))
    cat = rng.random(p) < 0.3
    X = np.empty((n, p))
    for j in range(p):
        X[:, j] = rng.integers(0, int(rng.integers(2, 6)), n) if cat[j] else np.round(rng.normal(size=n), 1)
    eta = X[:, 0] if not cat[0] else (X[:, 0] == 1) * 1.5
    y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return X, y, cat


def test_c03_tree_oracle():
    t0 = time.perf_counter()
    matches = 0
    for seed in range(50):
        X, y, cat = _oracle_case(seed)
        t = fit_tree(X, y, TreeParams(0.0, 1, 1), categorical=cat)
        g, j, thr = best_root(X, y, cat)
        same = int(t.feature[0]) == j and (j < 0 or cat[j] or abs(t.threshold[0] - thr) < 1e-12)
        matches += same
    toy = fit_tree(toy_dataset(), params=TreeParams(0.0, 30, 2))
    root = toy.feature_names[toy.feature[0]]
    kids = [toy.child_ids[toy.child_start[0] + k] for k in range(toy.n_children[0])]
    wg = sum(toy.n_tot[c] * gini_impurity(toy.n_yes[c], toy.n_tot[c] - toy.n_yes[c]) for c in kids) / toy.n_tot[0]
    dt = time.perf_counter() - t0
    ok = matches == 50 and root == "drought" and abs(wg - 32 / 98) < 1e-12 and dt < 10
    record(3, ok, f"oracle matches={matches}/50 toy root={root} weighted gini={wg:.6f} (32/98={32 / 98:.6f}) t={dt:.2f}s")


# -- 4: XOR interaction, tree vs logistic ----------------------------------------

def test_c04_xor():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    n = 2000
    cols = {f"x{j}": rng.integers(0, 2, n).astype(float) for j in range(5)}
    y = np.logical_xor(cols["x0"], cols["x1"]).astype(float)
    flip = rng.random(n) < 0.05
    y[flip] = 1 - y[flip]
    ds = Dataset(tuple(Column(k, BINARY, v) for k, v in cols.items()) + (Column("y", TARGET, y),))
    folds = kfold_split(n, 10, 0, stratify_on=y)
    dt_acc = cross_validate(Learner("DT", {}, KEEP_ALL), ds, folds=folds).mean("accuracy")
    lr_acc = cross_validate(Learner("LR", {}, KEEP_ALL), ds, folds=folds).mean("accuracy")
    dt = time.perf_counter() - t0
    record(4, dt_acc - lr_acc >= 0.15 and dt < 30, f"DT={dt_acc:.4f} LR={lr_acc:.4f} diff={dt_acc - lr_acc:.4f} t={dt:.1f}s")


# -- 5: ALL vs GWP, planted signal and null --------------------------------------

C5_LAGS = 6  # drought-index window for the ALL arm: spei12 at lags 0..6


def _c5_run(seed, weight):
    cfg = SynthConfig(n_rows=5000, seed=seed, drivers=(("male", 0.5), ("mabr", 0.6), ("spei12_lag6", weight)),
                      intercept=-0.3)
    g = generate(cfg)
    ds = join_and_lag(g.survey, g.panel, [12], C5_LAGS)
    folds = kfold_split(ds.n_rows, 10, seed, stratify_on=ds.y())
    a = cross_validate(Learner("LR", {}, steps_for("ALL")), ds, folds=folds, seed=seed)
    b = cross_validate(Learner("LR", {}, steps_for("GWP")), ds, folds=folds, seed=seed)
    return paired_t_test(a.metric("auc"), b.metric("auc"))


def test_c05_all_vs_gwp():
    t0 = time.perf_counter()
    signal = [_c5_run(s, 0.8) for s in range(20)]
    null = [_c5_run(s, 0.0) for s in range(20)]
    n_sig = sum(r["direction"] == "a>b" for r in signal)
    n_null = sum(r["p"] < 0.05 for r in null)
    dt = time.perf_counter() - t0
    record(5, n_sig >= 18 and n_null <= 3 and dt < 600,
           f"signal ALL>GWP {n_sig}/20, null p<0.05 {n_null}/20 "
           f"(null p min={min(r['p'] for r in null):.4f}) t={dt:.1f}s")


# -- 6: algorithm ranking on the default synthetic --------------------------------

def test_c06_algorithm_ranking():
    t0 = time.perf_counter()
    g = generate(SynthConfig(n_rows=5000, seed=6))
    ds = join_and_lag(g.survey, g.panel, (1, 2, 3, 6, 12, 18, 24), 48)
    folds = kfold_split(ds.n_rows, 10, 6, stratify_on=ds.y())
    auc = {a: cross_validate(Learner(a, {}, steps_for("ALL")), ds, folds=folds, seed=6).mean("auc")
           for a in ("DT", "RF", "XGB")}
    dt = time.perf_counter() - t0
    ok = auc["XGB"] >= auc["RF"] >= auc["DT"] and auc["XGB"] - auc["DT"] >= 0.02 and dt < 300
    record(6, ok, " ".join(f"{k}={v:.4f}" for k, v in auc.items()) + f" XGB-DT={auc['XGB'] - auc['DT']:.4f} t={dt:.1f}s")


# -- 7: planted drivers recovered by both importance measures ----------------------

def test_c07_importance_recovery():
    t0 = time.perf_counter()
    hits, tops = 0, []
    for seed in range(10):
        g = generate(SynthConfig(n_rows=5000, seed=seed, drivers=(("male", 0.8), ("mabr", 0.8)), intercept=-0.5))
        ds = join_and_lag(g.survey, g.panel, [12], 12)
        idx = np.random.default_rng([7, seed]).permutation(ds.n_rows)
        train, test = ds.take(idx[:4000]), ds.take(idx[4000:])
        f = Learner("XGB", {}, steps_for("ALL")).fit(train, seed=seed)
        GBT_LOSSES.append(f.model.train_loss)
        imp = impurity_importance(f.model).top(3)
        perm = permutation_importance(f.model, f.design(test), test.y(), n_repeats=3, seed=seed,
                                      feature_names=f.feature_names).top(3)
        hits += {"male", "mabr"} <= set(imp) and {"male", "mabr"} <= set(perm)
        tops.append((imp, perm))
    dt = time.perf_counter() - t0
    record(7, hits >= 9 and dt < 300, f"both drivers in both top-3 lists in {hits}/10 seeds t={dt:.1f}s")


# -- 8: V-shaped partial dependence on a planted |spei| effect -------------------

def test_c08_v_shape():
    t0 = time.perf_counter()
    hits, rows = 0, []
    for seed in range(10):
        cfg = SynthConfig(n_rows=5000, seed=seed, drivers=(("male", 0.5), ("mabr", 0.6), ("|spei12_lag6|", 0.8)),
                          intercept=-1.0)
        g = generate(cfg)
        full = join_and_lag(g.survey, g.panel, [12], 6)
        ds = full.select([c for c in full.names if not c.startswith("spei") or c == "spei12_lag6"])
        f = Learner("XGB", {}, steps_for("ALL")).fit(ds, seed=seed)
        GBT_LOSSES.append(f.model.train_loss)
        X = f.design(ds)
        pd = partial_dependence(f.model, X, "spei12_lag6", [1, 4, 7], f.feature_names).pd
        b = X[:, f.feature_names.index("spei12_lag6")]
        p = true_probability(g.eta["move_general"])
        eff1 = p[b == 1].mean() - p[b == 4].mean()
        eff7 = p[b == 7].mean() - p[b == 4].mean()
        ok = pd[0] - pd[1] >= eff1 / 2 and pd[2] - pd[1] >= eff7 / 2
        hits += ok
        rows.append(f"{pd[0] - pd[1]:.3f}/{eff1:.3f},{pd[2] - pd[1]:.3f}/{eff7:.3f}")
    dt = time.perf_counter() - t0
    record(8, hits >= 9 and dt < 180, f"V-shape in {hits}/10 seeds t={dt:.1f}s [pd gap/planted: {' '.join(rows)}]")


# -- 9: Bayesian optimisation on a quadratic -------------------------------------

def test_c09_hpo():
    t0 = time.perf_counter()
    space = SearchSpace((Dim("x", "real", 0.0, 10.0),))
    objective = lambda p: -(p["x"] - 3.0) ** 2
    bho = [bho_optimize(objective, space, 30, seed=s) for s in range(20)]
    rnd = [random_search(objective, space, 30, seed=s) for s in range(20)]
    close = sum(abs(log.best_params["x"] - 3.0) <= 0.5 for log in bho)
    med_b = float(np.median([log.best_value for log in bho]))
    med_r = float(np.median([log.best_value for log in rnd]))
    dt = time.perf_counter() - t0
    record(9, close >= 18 and med_b >= med_r and dt < 60,
           f"within 0.5: {close}/20, median best BHO={med_b:.3g} random={med_r:.3g} t={dt:.2f}s")


# -- 10: run-all determinism across worker counts --------------------------------

def _run_all(out: Path, jobs: int) -> float:
    t0 = time.perf_counter()
    subprocess.run([sys.executable, "-m", "treeclime.cli", "run-all", "--out", str(out), "--jobs", str(jobs),
                    "--seed", "0"], check=True, capture_output=True)
    return time.perf_counter() - t0


def test_c10_run_all_determinism(tmp_path):
    t1 = _run_all(tmp_path / "j1", 1)
    t4 = _run_all(tmp_path / "j4", 4)
    f1 = sorted(p.relative_to(tmp_path / "j1") for p in (tmp_path / "j1").rglob("*") if p.is_file())
    f4 = sorted(p.relative_to(tmp_path / "j4") for p in (tmp_path / "j4").rglob("*") if p.is_file())
    diff = [str(p) for p in f1 if (tmp_path / "j1" / p).read_bytes() != (tmp_path / "j4" / p).read_bytes()]
    ok = f1 == f4 and not diff and len(f1) > 0 and t1 < 600 and t4 < 600
    record(10, ok, f"{len(f1)} files, differing={diff or 'none'}, jobs1={t1:.0f}s jobs4={t4:.0f}s")


# -- 11: numerical checks --------------------------------------------------------

def test_c11_numerics():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(300, 6))
    y = (rng.random(300) < 0.35).astype(float)
    beta = rng.normal(size=7) * 0.3
    h = 1e-5
    fd = np.array([(log_likelihood(beta + h * e, X, y) - log_likelihood(beta - h * e, X, y)) / (2 * h)
                   for e in np.eye(7)])
    grad_err = float(np.max(np.abs(log_likelihood_gradient(beta, X, y) - fd)))

    Xb = rng.normal(size=(800, 5))
    yb = (rng.random(800) < 1 / (1 + np.exp(-2 * Xb[:, 0] * Xb[:, 1]))).astype(float)
    losses = list(GBT_LOSSES)
    for lr in (0.1, 0.5, 1.0):
        losses.append(fit_gbt(Xb, yb, GbtParams(60, lr, 3, TreeParams(0.0, 6, 1), l2_leaf=0.0,
                                                min_child_weight=0.0), seed=1).train_loss)
    monotone = all(np.all(np.diff(l) <= 0) for l in losses)

    import itertools
    grid = np.repeat(np.array(list(itertools.product(range(4), range(3), range(5))), dtype=float), 3, axis=0)
    yg = (rng.random(grid.shape[0]) < 0.2 + 0.15 * grid[:, 0] * (grid[:, 2] > 2)).astype(float)
    worst = 0.0
    for model in (fit_tree(grid, yg, TreeParams(0.0, 6, 2)),
                  fit_gbt(grid, yg, GbtParams(40, 0.3, None, TreeParams(0.0, 3, 2)), seed=0),
                  fit_forest(grid, yg, ForestParams(20, 2), seed=0)):
        mean_pred = float(np.mean(model.predict_proba(grid)))
        for j in range(3):
            vals, counts = np.unique(grid[:, j], return_counts=True)
            pd = partial_dependence(model, grid, j, vals).pd
            worst = max(worst, abs(float(np.dot(counts / counts.sum(), pd)) - mean_pred))
    ok = grad_err < 1e-5 and monotone and worst < 1e-9
    record(11, ok, f"gradient max err={grad_err:.2e}, gbt losses non-increasing on {len(losses)} fits: {monotone}, "
                   f"PD identity max err={worst:.1e}")
