"""Learner specifications: preprocessing plan plus algorithm and parameters."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baseline import LogisticModel, fit_logistic
from .data import Dataset
from .ensemble import ForestParams, GbtParams, fit_forest, fit_gbt
from .ensemble import model_from_dict as ensemble_from_dict
from .preprocess import Preprocessor
from .tree import Tree, TreeParams, fit_tree

ALGORITHMS = ("LR", "DT", "RF", "XGB", "MAJ")

DEFAULTS = {
    "LR": {"l2": 1e-6},
    "DT": {"cost_complexity": 1e-5, "max_depth": 30, "min_node": 20},
    "RF": {"n_trees": 1080, "mtry": 5, "cost_complexity": 0.0, "max_depth": 50, "min_node": 10, "bootstrap": True},
    "XGB": {"n_trees": 761, "mtry": 3, "learning_rate": 0.1, "l2_leaf": 1.0, "max_depth": 6, "min_node": 2,
            "cost_complexity": 0.0, "colsample": "tree"},
    "MAJ": {},
}

KEEP_ALL = ({"column": "*", "op": "keep"},)


class ConfigError(ValueError):
    pass


class MajorityModel:
    """Predicts the training positive rate for every row."""

    def __init__(self, rate: float, n_features: int):
        self.rate = float(rate)
        self.n_features = n_features

    def predict_proba(self, X) -> np.ndarray:
        return np.full(np.atleast_2d(X).shape[0], self.rate)

    def used_features(self) -> set[int]:
        return set()


def resolve_params(algorithm: str, params: dict | None = None) -> dict:
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    out = dict(DEFAULTS[algorithm])
    for k, v in (params or {}).items():
        if k not in out:
            raise ConfigError(f"parameter {k!r} does not apply to {algorithm}")
        out[k] = v
    return out


def fit_model(algorithm: str, X, y, feature_names, params: dict | None = None, seed: int = 0, jobs: int = 1):
    """Fit one of the supported algorithms on a numeric design matrix."""
    p = resolve_params(algorithm, params)
    if algorithm == "LR":
        return fit_logistic(X, y, l2=p["l2"], feature_names=feature_names)
    if algorithm == "MAJ":
        return MajorityModel(np.mean(y), X.shape[1])
    tp = TreeParams(float(p["cost_complexity"]), int(p["max_depth"]), int(p["min_node"]))
    if algorithm == "DT":
        return fit_tree(X, y, tp, seed=seed, feature_names=feature_names)
    if algorithm == "RF":
        fp = ForestParams(int(p["n_trees"]), min(int(p["mtry"]), X.shape[1]), tp, bool(p["bootstrap"]))
        return fit_forest(X, y, fp, seed=seed, feature_names=feature_names, jobs=jobs)
    gp = GbtParams(int(p["n_trees"]), float(p["learning_rate"]), min(int(p["mtry"]), X.shape[1]), tp,
                   float(p["l2_leaf"]), colsample=p["colsample"])
    return fit_gbt(X, y, gp, seed=seed, feature_names=feature_names)


@dataclass
class Fitted:
    preprocessor: Preprocessor
    model: object
    feature_names: list[str]
    algorithm: str = ""
    params: dict = field(default_factory=dict)

    def design(self, ds: Dataset) -> np.ndarray:
        return self.preprocessor.transform(ds).matrix(self.feature_names)

    def predict_proba(self, ds: Dataset) -> np.ndarray:
        return self.model.predict_proba(self.design(ds))


@dataclass(frozen=True)
class Learner:
    """What to fit: an algorithm, its parameter overrides and a preprocessing plan."""

    algorithm: str
    params: dict = field(default_factory=dict)
    steps: tuple = KEEP_ALL

    def __post_init__(self):
        resolve_params(self.algorithm, self.params)

    @property
    def resolved(self) -> dict:
        return resolve_params(self.algorithm, self.params)

    def fit(self, ds: Dataset, seed: int = 0, jobs: int = 1) -> Fitted:
        pre = Preprocessor([dict(s) for s in self.steps]).fit(ds)
        train = pre.transform(ds)
        names = train.feature_names()
        X = train.matrix(names)
        model = fit_model(self.algorithm, X, train.y().astype(np.float64), names, self.params, seed, jobs)
        return Fitted(pre, model, names, self.algorithm, self.resolved)


def model_to_dict(model) -> dict:
    if isinstance(model, MajorityModel):
        return {"model": "majority", "rate": model.rate, "n_features": model.n_features}
    d = model.to_dict()
    if isinstance(model, Tree):
        d = {"model": "tree", **d}
    return d


def model_from_dict(d: dict):
    kind = d.get("model")
    if kind == "majority":
        return MajorityModel(d["rate"], d["n_features"])
    if kind == "tree":
        return Tree.from_dict(d)
    if kind == "logistic":
        return LogisticModel.from_dict(d)
    if kind in ("forest", "gbt"):
        return ensemble_from_dict(d)
    raise ConfigError(f"unknown model kind {kind!r}")


def save_fitted(fitted: Fitted, path) -> None:
    doc = {
        "algorithm": fitted.algorithm,
        "params": fitted.params,
        "features": fitted.feature_names,
        "preprocessing": fitted.preprocessor.to_dict(),
        "model": model_to_dict(fitted.model),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_fitted(path) -> Fitted:
    try:
        doc = json.loads(Path(path).read_text())
        return Fitted(Preprocessor.from_dict(doc["preprocessing"]), model_from_dict(doc["model"]),
                      list(doc["features"]), doc["algorithm"], doc["params"])
    except (KeyError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: not a saved model ({e})") from None
