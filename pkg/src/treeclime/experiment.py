"""Experiment runner: data loading, evaluation, interpretation and report writing."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (CATEGORICAL, TIMESCALES, DataError, Dataset, ingest_spei, ingest_survey,
                   join_and_lag, parse_spei_column)
from .evaluation import (METRICS, FoldResults, comparison_rows, cross_validate, kfold_split, rows_to_csv,
                         ttest_header)
from .hpo import SearchSpace, bho_optimize
from .interpret import (GRID_HEADER, ImportanceReport, UntrainedModel, grid_to_csv, impurity_importance,
                        partial_dependence, permutation_importance, spei_lag_grid)
from .pipeline import ALGORITHMS, ConfigError, Learner, resolve_params
from .preprocess import gwp_steps
from .synth import SURVEY_SCHEMA, SynthConfig, generate

FEATURE_SETS = ("GWP", "SPEI", "ALL")
EXECUTION_ONLY = ("jobs", "out")
TARGETS = {"general": "move_general", "international": "move_international"}

HPO_SPACES = {
    "DT": [("cost_complexity", "log-real", 1e-5, 1e-1), ("max_depth", "integer", 2, 30),
           ("min_node", "integer", 2, 50)],
    "RF": [("mtry", "integer", 1, 20), ("n_trees", "integer", 50, 1500)],
    "XGB": [("mtry", "integer", 1, 20), ("n_trees", "integer", 50, 1000)],
    "LR": [("l2", "log-real", 1e-6, 10.0)],
}


@dataclass
class ExperimentConfig:
    survey: str | None = None
    spei: str | None = None
    target: str = "general"
    feature_set: str = "ALL"
    country: str = "all"
    algorithm: str = "XGB"
    k: int = 10
    seed: int = 0
    hpo: bool = False
    hpo_budget: int = 20
    hpo_k: int = 5
    out: str = "results"
    jobs: int = 1
    timescales: list = field(default_factory=lambda: list(TIMESCALES))
    max_lag: int = 48
    params: dict = field(default_factory=dict)
    pdp_top: int = 3
    perm_repeats: int = 3
    perm_top: int = 30
    perm_rows: int = 2000
    synth: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {sorted(TARGETS)}, got {self.target!r}")
        if self.feature_set not in FEATURE_SETS:
            raise ConfigError(f"feature_set must be one of {FEATURE_SETS}, got {self.feature_set!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if int(self.k) < 2:
            raise ConfigError("k must be >= 2")
        if int(self.jobs) < 1:
            raise ConfigError("jobs must be >= 1")
        for t in self.timescales:
            if int(t) not in TIMESCALES:
                raise ConfigError(f"timescale {t} not in {TIMESCALES}")
        if int(self.max_lag) < 0:
            raise ConfigError("max_lag must be >= 0")
        for key, path in (("survey", self.survey), ("spei", self.spei)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key} file not found: {path}")
        if (self.survey is None) != (self.spei is None):
            raise ConfigError("give both survey and spei, or neither to use synthetic data")
        resolve_params(self.algorithm, self.params.get(self.algorithm, {}) if self._nested() else self.params)
        return self

    def _nested(self) -> bool:
        return any(k in ALGORITHMS for k in self.params)

    def algo_params(self, algorithm: str | None = None) -> dict:
        a = algorithm or self.algorithm
        if self._nested():
            return dict(self.params.get(a, {}))
        return dict(self.params) if a == self.algorithm else {}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def result_dict(self) -> dict:
        """Config as recorded in reports: fields that cannot change results are left out."""
        d = self.to_dict()
        for k in EXECUTION_ONLY:
            d.pop(k)
        return d


def resolve_seed(explicit) -> int:
    if explicit is not None:
        return int(explicit)
    env = os.environ.get("TREECLIME_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"TREECLIME_SEED must be an integer, got {env!r}") from None
    return 0


# -- data -----------------------------------------------------------------------

def synth_config(cfg: ExperimentConfig) -> SynthConfig:
    d = dict(cfg.synth)
    d.setdefault("seed", cfg.seed)
    return SynthConfig.from_dict(d)


def load_base(cfg: ExperimentConfig) -> tuple[Dataset, object]:
    """Survey rows (target selected, country filtered) and the drought panel."""
    if cfg.survey is None:
        res = generate(synth_config(cfg))
        survey, panel = res.survey, res.panel
    else:
        survey = ingest_survey(cfg.survey, SURVEY_SCHEMA)
        panel = ingest_spei(cfg.spei)
    survey = survey.retarget(TARGETS[cfg.target])
    if cfg.country != "all":
        keep = np.flatnonzero(survey["origin"] == cfg.country)
        if keep.size == 0:
            raise DataError(f"no rows with origin {cfg.country!r}")
        survey = survey.take(keep)
    return survey, panel


def build_dataset(cfg: ExperimentConfig, survey: Dataset, panel) -> Dataset:
    if cfg.feature_set == "GWP":
        return survey
    return join_and_lag(survey, panel, [int(t) for t in cfg.timescales], int(cfg.max_lag))


def steps_for(feature_set: str) -> tuple:
    return tuple(gwp_steps(spei=feature_set in ("SPEI", "ALL"), gwp=feature_set in ("GWP", "ALL")))


def learner_for(cfg: ExperimentConfig, algorithm: str | None = None, feature_set: str | None = None,
                params: dict | None = None) -> Learner:
    a = algorithm or cfg.algorithm
    p = cfg.algo_params(a) if params is None else params
    return Learner(a, p, steps_for(feature_set or cfg.feature_set))


# -- reports --------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _round(x, nd=10):
    if isinstance(x, float):
        return round(x, nd) if np.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _round(v, nd) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v, nd) for v in x]
    return x


def tune(cfg: ExperimentConfig, ds: Dataset, algorithm: str, feature_set: str):
    """Bayesian search over the algorithm's space by mean ``hpo_k``-fold AUC."""
    space = SearchSpace.from_list(HPO_SPACES[algorithm])
    base = cfg.algo_params(algorithm)
    folds = kfold_split(ds.n_rows, int(cfg.hpo_k), cfg.seed, stratify_on=ds.y())

    def objective(params):
        learner = Learner(algorithm, {**base, **params}, steps_for(feature_set))
        return cross_validate(learner, ds, folds=folds, seed=cfg.seed, jobs=cfg.jobs).mean("auc")

    log = bho_optimize(objective, space, int(cfg.hpo_budget), seed=cfg.seed)
    return log, {**base, **log.best_params}


def interpret_model(cfg: ExperimentConfig, fitted, ds: Dataset):
    """Impurity and permutation importance plus PDPs of the top features."""
    X = fitted.design(ds)
    y = ds.y().astype(np.float64)
    names = fitted.feature_names
    model = fitted.model
    try:
        imp = impurity_importance(model)
    except UntrainedModel:
        imp = None
    if cfg.perm_rows and X.shape[0] > cfg.perm_rows:
        rows = np.sort(np.random.default_rng([cfg.seed, 7]).choice(X.shape[0], cfg.perm_rows, replace=False))
        Xb, yb = X[rows], y[rows]
    else:
        Xb, yb = X, y
    cols = list(range(len(names)))
    if cfg.perm_top and imp is not None:
        order = [names.index(n) for n, _ in imp.ranked()]
        cols = sorted(order[: int(cfg.perm_top)])
    sub = _Restricted(model, Xb, cols)
    perm = permutation_importance(sub, Xb[:, cols], yb, "auc", int(cfg.perm_repeats), cfg.seed,
                                  feature_names=[names[j] for j in cols])
    ranking = imp if imp is not None else perm
    top = [n for n, v in ranking.ranked() if v > 0][: int(cfg.pdp_top)]
    pdps = [partial_dependence(model, Xb, n, feature_names=names) for n in top]
    return imp, perm, pdps


class _Restricted:
    """View of a model in which only columns ``cols`` of ``X`` vary."""

    def __init__(self, model, X, cols):
        self.model, self.X, self.cols = model, X, cols
        used = model.used_features() if hasattr(model, "used_features") else set(range(X.shape[1]))
        self._used = {i for i, j in enumerate(cols) if j in used}

    def used_features(self):
        return self._used

    def predict_proba(self, Xs):
        full = self.X.copy()
        full[:, self.cols] = Xs
        return self.model.predict_proba(full)


def importance_csv(imp: ImportanceReport | None, perm: ImportanceReport, names) -> str:
    rows = []
    for n in names:
        i = imp.entries.get(n) if imp is not None else None
        p = perm.entries.get(n)
        sd = float(np.std(perm.deltas[n], ddof=0)) if n in perm.deltas else None
        rows.append((n, i, p, sd))
    rows.sort(key=lambda r: (-(r[1] if r[1] is not None else r[2] or 0.0), r[0]))
    fmt = lambda v: "" if v is None else f"{v:.10f}"
    return rows_to_csv(["feature", "impurity", "permutation", "permutation_sd"],
                       [[n, fmt(i), fmt(p), fmt(sd)] for n, i, p, sd in rows])


def write_report(out_dir: Path, cfg: ExperimentConfig, results: FoldResults, fitted, ds: Dataset,
                 extra: dict | None = None, interpret: bool = True) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "folds.csv").write_text(results.to_csv())
    summary = {
        "version": __version__,
        "config": cfg.result_dict(),
        "learner": {"algorithm": fitted.algorithm, "params": _round(fitted.params)},
        "n_rows": ds.n_rows,
        "n_features": len(fitted.feature_names),
        "mean": _round(results.summary()),
        "preprocessing": fitted.preprocessor.to_dict(),
    }
    if interpret:
        imp, perm, pdps = interpret_model(cfg, fitted, ds)
        (out_dir / "importance.csv").write_text(importance_csv(imp, perm, fitted.feature_names))
        grid = spei_lag_grid(imp if imp is not None else perm)
        (out_dir / "spei_lag_grid.csv").write_text(grid_to_csv(grid) if grid else rows_to_csv(GRID_HEADER, []))
        for s in pdps:
            (out_dir / f"pdp_{s.feature}.csv").write_text(s.to_csv())
        summary["pdp_features"] = [s.feature for s in pdps]
        summary["top_features"] = [n for n, _ in (imp or perm).ranked()[:10]]
    if extra:
        summary.update(extra)
    (out_dir / "summary.json").write_text(_dump(summary))
    return summary


def run_experiment(cfg: ExperimentConfig, name: str | None = None, base=None) -> dict:
    """Cross-validate one (algorithm, feature set) arm and write its report."""
    cfg.validate()
    survey, panel = base if base is not None else load_base(cfg)
    ds = build_dataset(cfg, survey, panel)
    out = Path(cfg.out) / (name or f"{cfg.algorithm}_{cfg.feature_set}_{cfg.target}")
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.algo_params()
    extra = {}
    if cfg.hpo and cfg.algorithm in HPO_SPACES:
        log, params = tune(cfg, ds, cfg.algorithm, cfg.feature_set)
        (out / "hpo_trials.csv").write_text(log.to_csv(include_time=False))
        (out / "best_params.json").write_text(log.best_json() + "\n")
        extra["hpo_best_auc"] = _round(log.best_value)
    learner = learner_for(cfg, params=params)
    results = cross_validate(learner, ds, int(cfg.k), cfg.seed, jobs=int(cfg.jobs), label=out.name)
    fitted = learner.fit(ds, seed=cfg.seed, jobs=int(cfg.jobs))
    return write_report(out, cfg, results, fitted, ds, extra)


def compare_feature_sets(cfg: ExperimentConfig, arms=("ALL", "GWP"), name: str | None = None, base=None) -> dict:
    """Paired comparison of two feature sets on identical folds."""
    cfg.validate()
    survey, panel = base if base is not None else load_base(cfg)
    out = Path(cfg.out) / (name or f"compare_{cfg.algorithm}_{arms[0]}_{arms[1]}_{cfg.target}")
    out.mkdir(parents=True, exist_ok=True)
    folds = kfold_split(survey.n_rows, int(cfg.k), cfg.seed, stratify_on=survey.y())
    res = {}
    for arm in arms:
        acfg = replace(cfg, feature_set=arm)
        ds = build_dataset(acfg, survey, panel)
        res[arm] = cross_validate(learner_for(acfg), ds, folds=folds, seed=cfg.seed, jobs=int(cfg.jobs), label=arm)
    rows = comparison_rows(res[arms[0]], res[arms[1]], cfg.target, arms[0], arms[1])
    (out / "ttest.csv").write_text(rows_to_csv(ttest_header(arms[0], arms[1]), rows))
    (out / "folds.csv").write_text("".join(
        r.to_csv() if i == 0 else r.to_csv().split("\n", 1)[1] for i, r in enumerate(res.values())))
    summary = {
        "version": __version__,
        "config": cfg.result_dict(),
        "arms": list(arms),
        "mean": {arm: _round(r.summary()) for arm, r in res.items()},
        "ttest": [dict(zip(ttest_header(arms[0], arms[1]), r)) for r in rows],
    }
    (out / "summary.json").write_text(_dump(summary))
    return summary


def run_all(cfg: ExperimentConfig) -> dict:
    """Q1 to Q5 battery on one dataset.

    q1: DT, RF and XGB on ALL (ranked by mean AUC); q2: ALL against GWP for
    each target; q3: per-country models against the pooled model; q4 and
    q5: importance, drought-index lag grid and PDPs (inside each q1 report).
    """
    cfg.validate()
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    base = load_base(cfg)
    battery = {"version": __version__, "config": cfg.result_dict()}

    q1 = {}
    for alg in ("DT", "RF", "XGB"):
        acfg = replace(cfg, algorithm=alg, feature_set="ALL")
        s = run_experiment(acfg, name=f"q1_{alg}", base=base)
        q1[alg] = s["mean"]
    battery["q1_ranking"] = sorted(q1, key=lambda a: (-(q1[a]["auc"] or 0.0), a))
    battery["q1_mean"] = q1

    q2 = {}
    for target in ("general", "international"):
        tcfg = replace(cfg, target=target, algorithm="XGB")
        tbase = load_base(tcfg) if target != cfg.target else base
        s = compare_feature_sets(tcfg, ("ALL", "GWP"), name=f"q2_{target}", base=tbase)
        q2[target] = [r["comparison"] for r in s["ttest"]]
    battery["q2_comparisons"] = q2

    survey, panel = base
    pooled = q1["XGB"]
    rows = []
    for country in sorted(set(survey["origin"])):
        keep = np.flatnonzero(survey["origin"] == country)
        sub = survey.take(keep)
        if min(sub.y().sum(), sub.n_rows - sub.y().sum()) < cfg.k:
            continue
        ccfg = replace(cfg, algorithm="XGB", feature_set="ALL", country=country)
        ds = build_dataset(ccfg, sub, panel)
        r = cross_validate(learner_for(ccfg), ds, int(cfg.k), cfg.seed, jobs=int(cfg.jobs), label=country)
        for m in METRICS:
            cm, pm = r.mean(m), pooled[m] if pooled[m] is not None else float("nan")
            rows.append([country, m, f"{cm:.10f}", f"{pm:.10f}", f"{cm - pm:.10f}"])
    q3 = root / "q3_countries"
    q3.mkdir(exist_ok=True)
    (q3 / "country_deltas.csv").write_text(
        rows_to_csv(["country", "metric", "country_mean", "pooled_mean", "delta"], rows))
    battery["q3_countries"] = sorted({r[0] for r in rows})
    (root / "summary.json").write_text(_dump(battery))
    return battery
