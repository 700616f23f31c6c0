"""Synthetic survey and drought-index panel with planted effects."""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import (BINARY, CATEGORICAL, NUMERIC, TARGET, TIMESCALES, Column, Dataset, SpeiPanel,
                   format_month, join_and_lag, write_spei, write_survey)

COUNTRIES = ("BFA", "IVC", "MAL", "MRT", "NIG", "SEN")
COUNTRY_SHARES = (5004, 3417, 4931, 6724, 5927, 5758)
YEAR_SHARES = (4143, 3975, 4834, 4019, 4835, 5025, 4930)
# household size classes (<=3, 4, 5-6, >=7) and age bands (15-24, 25-34, 35-49)
HHSIZE_SHARES = (0.34, 0.18, 0.28, 0.20)
AGE_SHARES = (0.36, 0.34, 0.30)
BINARY_SHARES = {"male": 0.53, "urban": 0.24, "mabr": 0.47, "hskill": 0.03}
INCOME_MEAN, INCOME_SD = 6.41, 1.2

SURVEY_SCHEMA = [
    ("origin", CATEGORICAL), ("year", CATEGORICAL), ("region_id", CATEGORICAL),
    ("interview_month", CATEGORICAL), ("male", BINARY), ("urban", BINARY), ("mabr", BINARY),
    ("hskill", BINARY), ("age", NUMERIC), ("hhsize", NUMERIC), ("lnhhincpc", NUMERIC),
    ("move_general", TARGET), ("move_international", BINARY),
]


class InvalidShares(ValueError):
    pass


def _norm(shares, name):
    s = np.asarray(shares, dtype=np.float64)
    if s.ndim != 1 or s.size == 0 or (s < 0).any() or s.sum() <= 0:
        raise InvalidShares(f"{name}: shares must be non-negative and not all zero")
    return s / s.sum()


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``drivers`` lists ``(expression, weight)`` pairs for the general-move
    target; ``drivers_international`` does the same for the second target.
    An expression is a product (``a*b``) of factors, each a column name,
    ``|name|`` for an absolute value, or ``name==label`` for an indicator.
    Drought-index columns (``spei<T>_lag<L>``) are available by name.
    """

    n_rows: int = 5000
    countries: int = 6
    years: int = 7
    first_year: int = 2009
    regions_per_country: int = 3
    history_months: int = 660
    ar_coef: float = 0.8
    country_shares: tuple = COUNTRY_SHARES
    year_shares: tuple = YEAR_SHARES
    hhsize_shares: tuple = HHSIZE_SHARES
    age_shares: tuple = AGE_SHARES
    binary_shares: dict = field(default_factory=lambda: dict(BINARY_SHARES))
    drivers: tuple = (("male", 0.5), ("mabr", 0.6), ("|spei12_lag6|", 0.8), ("spei3_lag35", -0.4))
    drivers_international: tuple = (("mabr", 0.8), ("age<25", 0.5), ("|spei24_lag47|", 0.6))
    intercept: float = -0.8
    intercept_international: float = -1.2
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 1:
            raise ValueError("n_rows must be >= 1")
        if not 1 <= self.countries <= len(COUNTRIES):
            raise ValueError(f"countries must lie in 1..{len(COUNTRIES)}")
        if self.years < 1 or self.regions_per_country < 1:
            raise ValueError("years and regions_per_country must be >= 1")
        if self.noise <= 0:
            raise ValueError("noise must be positive")
        _norm(self.country_shares[: self.countries], "country_shares")
        if len(self.year_shares) < self.years:
            raise InvalidShares("year_shares shorter than the number of years")
        _norm(self.year_shares[: self.years], "year_shares")
        _norm(self.hhsize_shares, "hhsize_shares")
        _norm(self.age_shares, "age_shares")
        for k, v in self.binary_shares.items():
            if not 0 <= v <= 1:
                raise InvalidShares(f"binary share for {k} must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drivers"] = [list(x) for x in self.drivers]
        d["drivers_international"] = [list(x) for x in self.drivers_international]
        for k in ("country_shares", "year_shares", "hhsize_shares", "age_shares"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for k in ("drivers", "drivers_international"):
            if k in d:
                d[k] = tuple((str(e), float(w)) for e, w in d[k])
        for k in ("country_shares", "year_shares", "hhsize_shares", "age_shares"):
            if k in d:
                d[k] = tuple(d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthResult:
    survey: Dataset
    panel: SpeiPanel
    truth: dict
    eta: dict[str, np.ndarray]

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"survey": out / "survey.csv", "spei": out / "spei.csv", "truth": out / "ground_truth.json"}
        write_survey(self.survey, paths["survey"])
        write_spei(self.panel, paths["spei"])
        paths["truth"].write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n")
        return paths


def regions_of(cfg: SynthConfig) -> list[str]:
    return [f"{c}-R{r + 1}" for c in COUNTRIES[: cfg.countries] for r in range(cfg.regions_per_country)]


def simulate_spei(cfg: SynthConfig, rng: np.random.Generator) -> tuple[list[str], int, np.ndarray]:
    """AR(1) base series per region; timescale T is the T-month rolling mean.

    Every (region, timescale) series is standardised to mean 0, sd 1 over
    the emitted history. Returns (regions, first month index, cube) with
    cube shape (regions, months, timescales).
    """
    regions = regions_of(cfg)
    burn = max(TIMESCALES) - 1 + 120
    total = cfg.history_months + burn
    phi = cfg.ar_coef
    shocks = rng.standard_normal((len(regions), total)) * np.sqrt(1 - phi * phi)
    base = np.empty_like(shocks)
    base[:, 0] = rng.standard_normal(len(regions))
    for t in range(1, total):
        base[:, t] = phi * base[:, t - 1] + shocks[:, t]
    csum = np.concatenate([np.zeros((len(regions), 1)), np.cumsum(base, axis=1)], axis=1)
    cube = np.empty((len(regions), cfg.history_months, len(TIMESCALES)))
    for k, T in enumerate(TIMESCALES):
        roll = (csum[:, T:] - csum[:, :-T]) / T
        s = roll[:, -cfg.history_months:]
        s = (s - s.mean(axis=1, keepdims=True)) / s.std(axis=1, keepdims=True)
        cube[:, :, k] = s
    last = (cfg.first_year + cfg.years - 1) * 12 + 11
    return regions, last - cfg.history_months + 1, cube


def _categorical_draw(rng, labels, shares, n):
    return np.asarray(labels, dtype=object)[rng.choice(len(labels), size=n, p=shares)]


_IND = re.compile(r"^(?P<name>[A-Za-z0-9_]+)\s*(?P<op>==|<=|>=|<|>)\s*(?P<val>[^=<>]+)$")


def evaluate_driver(expr: str, ds: Dataset) -> np.ndarray:
    """Numeric value of a driver expression on every row of ``ds``."""
    out = np.ones(ds.n_rows)
    for factor in expr.split("*"):
        f = factor.strip()
        if f.startswith("|") and f.endswith("|"):
            out = out * np.abs(ds[f[1:-1].strip()].astype(np.float64))
            continue
        m = _IND.match(f)
        if m:
            col = ds.column(m["name"])
            val, op = m["val"].strip(), m["op"]
            if col.role == CATEGORICAL:
                if op != "==":
                    raise ValueError(f"only == applies to categorical column {m['name']!r}")
                ind = np.array([v == val for v in col.values], dtype=np.float64)
            else:
                x = col.values.astype(np.float64)
                ind = {"==": x == float(val), "<=": x <= float(val), ">=": x >= float(val),
                       "<": x < float(val), ">": x > float(val)}[op].astype(np.float64)
            out = out * ind
            continue
        out = out * ds[f].astype(np.float64)
    return out


def _linear_predictor(ds: Dataset, drivers, intercept: float) -> np.ndarray:
    eta = np.full(ds.n_rows, float(intercept))
    for expr, w in drivers:
        if w != 0:
            eta += float(w) * evaluate_driver(expr, ds)
    return eta


def _needed_spei(drivers) -> set[tuple[int, int]]:
    keys = set()
    for expr, _ in drivers:
        for m in re.finditer(r"spei(\d+)_lag(\d+)", expr):
            keys.add((int(m[1]), int(m[2])))
    return keys


def generate(cfg: SynthConfig = SynthConfig()) -> SynthResult:
    """Draw a survey, its regional drought-index panel and planted targets.

    Survey rows get demographics from the configured marginals and an
    interview month within their survey year. Each target is
    ``1[eta + noise * L > 0]`` with ``L`` standard logistic, i.e. a
    Bernoulli draw with probability ``sigmoid(eta / noise)``.
    """
    ss = np.random.SeedSequence(cfg.seed)
    rng_spei, rng_survey, rng_y = (np.random.default_rng(s) for s in ss.spawn(3))
    regions, m0, cube = simulate_spei(cfg, rng_spei)
    n = cfg.n_rows
    countries = COUNTRIES[: cfg.countries]
    origin = _categorical_draw(rng_survey, countries, _norm(cfg.country_shares[: cfg.countries], "country"), n)
    years = np.arange(cfg.first_year, cfg.first_year + cfg.years)
    year = rng_survey.choice(years, size=n, p=_norm(cfg.year_shares[: cfg.years], "year"))
    region_no = rng_survey.integers(1, cfg.regions_per_country + 1, size=n)
    region = np.array([f"{o}-R{r}" for o, r in zip(origin, region_no)], dtype=object)
    month = rng_survey.integers(1, 13, size=n)
    interview = np.array([format_month(y * 12 + m - 1) for y, m in zip(year, month)], dtype=object)
    cols = {
        "origin": Column("origin", CATEGORICAL, origin),
        "year": Column("year", CATEGORICAL, np.array([str(y) for y in year], dtype=object)),
        "region_id": Column("region_id", CATEGORICAL, region),
        "interview_month": Column("interview_month", CATEGORICAL, interview),
    }
    for name in ("male", "urban", "mabr", "hskill"):
        share = cfg.binary_shares.get(name, BINARY_SHARES[name])
        cols[name] = Column(name, BINARY, (rng_survey.random(n) < share).astype(np.float64))
    band = rng_survey.choice(3, size=n, p=_norm(cfg.age_shares, "age"))
    lo, hi = np.array([15, 25, 35]), np.array([25, 35, 50])
    age = lo[band] + np.floor(rng_survey.random(n) * (hi - lo)[band])
    cols["age"] = Column("age", NUMERIC, age)
    hclass = rng_survey.choice(4, size=n, p=_norm(cfg.hhsize_shares, "hhsize"))
    hlo, hhi = np.array([1, 4, 5, 7]), np.array([4, 5, 7, 16])
    cols["hhsize"] = Column("hhsize", NUMERIC, hlo[hclass] + np.floor(rng_survey.random(n) * (hhi - hlo)[hclass]))
    income = np.round(rng_survey.normal(INCOME_MEAN, INCOME_SD, size=n), 4)
    cols["lnhhincpc"] = Column("lnhhincpc", NUMERIC, income)
    base = Dataset(tuple(cols.values()))

    panel = SpeiPanel(((r, m0 + t, T), float(cube[i, t, k]))
                      for i, r in enumerate(regions) for t in range(cube.shape[1])
                      for k, T in enumerate(TIMESCALES))
    needed = _needed_spei(list(cfg.drivers) + list(cfg.drivers_international))
    work = base
    for T in sorted({t for t, _ in needed}):
        lags = sorted(l for t, l in needed if t == T)
        joined = join_and_lag(base, panel, [T], max(lags))
        work = work.with_columns(joined.column(f"spei{T}_lag{l}") for l in lags)
    eta_g = _linear_predictor(work, cfg.drivers, cfg.intercept)
    eta_i = _linear_predictor(work, cfg.drivers_international, cfg.intercept_international)
    y_g = (eta_g + cfg.noise * rng_y.logistic(size=n) > 0).astype(np.float64)
    y_i = (eta_i + cfg.noise * rng_y.logistic(size=n) > 0).astype(np.float64)
    survey = base.with_columns([Column("move_general", TARGET, y_g), Column("move_international", BINARY, y_i)])
    truth = {
        "config": cfg.to_dict(),
        "targets": {
            "move_general": {"intercept": cfg.intercept, "drivers": [[e, w] for e, w in cfg.drivers]},
            "move_international": {"intercept": cfg.intercept_international,
                                   "drivers": [[e, w] for e, w in cfg.drivers_international]},
        },
        "noise": cfg.noise,
        "positive_rate": {"move_general": float(y_g.mean()), "move_international": float(y_i.mean())},
        "regions": regions,
        "spei_first_month": format_month(m0),
        "spei_months": int(cube.shape[1]),
    }
    return SynthResult(survey, panel, truth, {"move_general": eta_g, "move_international": eta_i})


def true_probability(eta: np.ndarray, noise: float = 1.0) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.asarray(eta) / noise))
