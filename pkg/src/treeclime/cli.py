"""Command-line entry point: ``treeclime <subcommand> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data import DataError, write_survey
from .evaluation import rows_to_csv
from .experiment import (FEATURE_SETS, HPO_SPACES, TARGETS, ExperimentConfig, build_dataset,
                         compare_feature_sets, importance_csv, learner_for, load_base, resolve_seed,
                         run_all, run_experiment, synth_config, tune)
from .interpret import (UntrainedModel, grid_to_csv, impurity_importance, partial_dependence,
                        permutation_importance, spei_lag_grid)
from .pipeline import ALGORITHMS, ConfigError, load_fitted, save_fitted
from .preprocess import Preprocessor
from .synth import InvalidShares, generate

EXIT_CONFIG = 2
EXIT_DATA = 3


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _json_obj(text: str) -> dict:
    try:
        v = json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"invalid JSON: {e}") from None
    if not isinstance(v, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return v


def _flag(parser, name, **kw):
    """Register ``--name`` plus its dashed spelling, defaulting to None."""
    opts = [f"--{name}"]
    if "_" in name:
        opts.append(f"--{name.replace('_', '-')}")
    parser.add_argument(*opts, dest=name, default=None, **kw)


def _common(p):
    p.add_argument("--config", default=None, help="JSON experiment config")
    _flag(p, "survey", help="survey CSV (omit with --spei to use synthetic data)")
    _flag(p, "spei", help="long-format drought-index CSV")
    _flag(p, "target", choices=sorted(TARGETS))
    _flag(p, "feature_set", choices=FEATURE_SETS)
    _flag(p, "country", help="origin code or 'all'")
    _flag(p, "algorithm", choices=ALGORITHMS)
    _flag(p, "k", type=int, help="folds")
    _flag(p, "seed", type=int, help="seed (falls back to TREECLIME_SEED, then 0)")
    _flag(p, "hpo", type=lambda s: s.lower() in ("1", "true", "yes", "on"), help="true/false")
    _flag(p, "hpo_budget", type=int)
    _flag(p, "hpo_k", type=int)
    _flag(p, "out", help="output directory")
    _flag(p, "jobs", type=int, help="worker threads; output does not depend on it")
    _flag(p, "timescales", type=_int_list, help="e.g. 1,3,12")
    _flag(p, "max_lag", type=int)
    _flag(p, "params", type=_json_obj, help='JSON, e.g. {"n_trees": 200}')
    _flag(p, "pdp_top", type=int)
    _flag(p, "perm_repeats", type=int)
    _flag(p, "perm_top", type=int)
    _flag(p, "perm_rows", type=int)
    _flag(p, "synth", type=_json_obj, help="JSON generator settings")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treeclime", description=__doc__)
    ap.add_argument("--version", action="version", version=f"treeclime {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "write a synthetic survey, drought panel and ground truth",
        "prep": "join, lag and preprocess data; write the design table and manifest",
        "hpo": "Bayesian hyperparameter search by cross-validated AUC",
        "train": "fit a model on all rows and save it as JSON",
        "evaluate": "k-fold evaluation with importance and PDP report",
        "importance": "impurity and permutation importance of a saved model",
        "pdp": "partial dependence of a saved model on one feature",
        "compare": "paired t-test between two feature sets on shared folds",
        "run-all": "the full question battery on one dataset",
    }
    for name, h in helps.items():
        p = sub.add_parser(name, help=h)
        _common(p)
        if name in ("importance", "pdp"):
            p.add_argument("--model", required=True, help="model JSON written by 'train'")
        if name == "pdp":
            p.add_argument("--feature", required=True)
            p.add_argument("--values", default=None, help="comma-separated values (default: observed)")
            p.add_argument("--response", choices=("proba", "label"), default="proba")
        if name == "compare":
            p.add_argument("--arms", default="ALL,GWP", help="two feature sets, e.g. ALL,GWP")
    return ap


def resolve_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    cfg = ExperimentConfig.from_dict(data)
    overrides = {k: v for k, v in vars(args).items()
                 if v is not None and k in cfg.__dataclass_fields__}
    cfg = replace(cfg, **overrides)
    cfg.seed = resolve_seed(args.seed if args.seed is not None else data.get("seed"))
    return cfg.validate()


def _out(cfg) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_synth(cfg, args):
    res = generate(synth_config(cfg))
    paths = res.write(_out(cfg))
    for p in paths.values():
        print(p)


def _dataset(cfg):
    survey, panel = load_base(cfg)
    return build_dataset(cfg, survey, panel)


def cmd_prep(cfg, args):
    ds = _dataset(cfg)
    learner = learner_for(cfg)
    pre = Preprocessor([dict(s) for s in learner.steps]).fit(ds)
    out = pre.transform(ds)
    root = _out(cfg)
    write_survey(out, root / "prepared.csv")
    (root / "manifest.json").write_text(pre.to_json() + "\n")
    print(f"{out.n_rows} rows, {len(out.feature_names())} features -> {root / 'prepared.csv'}")


def cmd_hpo(cfg, args):
    if cfg.algorithm not in HPO_SPACES:
        raise ConfigError(f"no search space for {cfg.algorithm}")
    ds = _dataset(cfg)
    log, best = tune(cfg, ds, cfg.algorithm, cfg.feature_set)
    root = _out(cfg) / f"hpo_{cfg.algorithm}_{cfg.feature_set}_{cfg.target}"
    root.mkdir(exist_ok=True)
    (root / "hpo_trials.csv").write_text(log.to_csv(include_time=False))
    (root / "best_params.json").write_text(json.dumps({cfg.algorithm: best}, sort_keys=True) + "\n")
    print(json.dumps({"best_auc": log.best_value, "params": best}, sort_keys=True))


def cmd_train(cfg, args):
    ds = _dataset(cfg)
    fitted = learner_for(cfg).fit(ds, seed=cfg.seed, jobs=cfg.jobs)
    path = _out(cfg) / f"model_{cfg.algorithm}_{cfg.feature_set}_{cfg.target}.json"
    save_fitted(fitted, path)
    print(path)


def cmd_evaluate(cfg, args):
    s = run_experiment(cfg)
    print(json.dumps(s["mean"], sort_keys=True))


def cmd_importance(cfg, args):
    fitted = load_fitted(args.model)
    ds = _dataset(cfg)
    X = fitted.design(ds)
    try:
        imp = impurity_importance(fitted.model)
    except UntrainedModel:
        imp = None
    perm = permutation_importance(fitted.model, X, ds.y(), "auc", cfg.perm_repeats, cfg.seed,
                                  feature_names=fitted.feature_names)
    root = _out(cfg)
    (root / "importance.csv").write_text(importance_csv(imp, perm, fitted.feature_names))
    grid = spei_lag_grid(imp if imp is not None else perm)
    (root / "spei_lag_grid.csv").write_text(grid_to_csv(grid))
    print(root / "importance.csv")


def cmd_pdp(cfg, args):
    fitted = load_fitted(args.model)
    ds = _dataset(cfg)
    X = fitted.design(ds)
    values = None
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError(f"--values must be numbers, got {args.values!r}") from None
    if args.feature not in fitted.feature_names:
        raise ConfigError(f"feature {args.feature!r} not in the model; known: {', '.join(fitted.feature_names[:10])}...")
    s = partial_dependence(fitted.model, X, args.feature, values, fitted.feature_names, response=args.response)
    path = _out(cfg) / f"pdp_{args.feature}.csv"
    path.write_text(s.to_csv())
    print(path)


def cmd_compare(cfg, args):
    arms = tuple(a.strip() for a in args.arms.split(","))
    if len(arms) != 2 or any(a not in FEATURE_SETS for a in arms):
        raise ConfigError(f"--arms needs two of {FEATURE_SETS}, got {args.arms!r}")
    s = compare_feature_sets(cfg, arms)
    print(rows_to_csv(list(s["ttest"][0]), [list(r.values()) for r in s["ttest"]]), end="")


def cmd_run_all(cfg, args):
    s = run_all(cfg)
    print(json.dumps({"q1_ranking": s["q1_ranking"], "q2": s["q2_comparisons"]}, sort_keys=True))


COMMANDS = {
    "synth": cmd_synth, "prep": cmd_prep, "hpo": cmd_hpo, "train": cmd_train, "evaluate": cmd_evaluate,
    "importance": cmd_importance, "pdp": cmd_pdp, "compare": cmd_compare, "run-all": cmd_run_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidShares) as e:
        print(f"treeclime: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"treeclime: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
