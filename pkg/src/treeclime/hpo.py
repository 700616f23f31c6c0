"""Bayesian hyperparameter search: Gaussian-process surrogate with expected improvement."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

KINDS = ("integer", "real", "log-real")
NOISE = 1e-6
LENGTH_GRID = (0.05, 0.1, 0.2, 0.4, 0.8, 1.6)
N_CANDIDATES = 1024


class ObjectiveFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Dim:
    name: str
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"dimension kind must be one of {KINDS}")
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be < upper")
        if self.kind == "log-real" and self.lower <= 0:
            raise ValueError(f"{self.name}: log-real bounds must be positive")

    def from_unit(self, u: float):
        if self.kind == "log-real":
            lo, hi = math.log(self.lower), math.log(self.upper)
            return float(math.exp(lo + u * (hi - lo)))
        v = self.lower + u * (self.upper - self.lower)
        if self.kind == "integer":
            return int(min(max(round(v), self.lower), self.upper))
        return float(v)

    def to_unit(self, v) -> float:
        if self.kind == "log-real":
            lo, hi = math.log(self.lower), math.log(self.upper)
            return (math.log(v) - lo) / (hi - lo)
        return (v - self.lower) / (self.upper - self.lower)


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]

    @classmethod
    def from_list(cls, items) -> "SearchSpace":
        return cls(tuple(d if isinstance(d, Dim) else Dim(*d) for d in items))

    @property
    def d(self) -> int:
        return len(self.dims)

    def decode(self, u) -> dict:
        return {dim.name: dim.from_unit(float(x)) for dim, x in zip(self.dims, u)}

    def encode(self, params: dict) -> np.ndarray:
        return np.array([dim.to_unit(params[dim.name]) for dim in self.dims])


@dataclass
class TrialLog:
    trials: list[dict] = field(default_factory=list)

    @property
    def best(self) -> int:
        vals = [t["value"] for t in self.trials]
        ok = [i for i, v in enumerate(vals) if not math.isnan(v)]
        if not ok:
            return -1
        return max(ok, key=lambda i: (vals[i], -i))

    @property
    def best_value(self) -> float:
        b = self.best
        return self.trials[b]["value"] if b >= 0 else float("nan")

    @property
    def best_params(self) -> dict:
        b = self.best
        return dict(self.trials[b]["params"]) if b >= 0 else {}

    def to_csv(self, include_time: bool = True) -> str:
        names = list(self.trials[0]["params"]) if self.trials else []
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "phase", *names, "value", *(["wall_time"] if include_time else []), "error"])
        for t in self.trials:
            row = [t["trial"], t["phase"], *(t["params"][n] for n in names), f"{t['value']:.10f}"]
            if include_time:
                row.append(f"{t['wall_time']:.4f}")
            row.append(t["error"])
            w.writerow(row)
        return buf.getvalue()

    def best_json(self) -> str:
        return json.dumps(self.best_params, sort_keys=True)


def expected_improvement(mean, sd, best):
    """EI for maximisation; ``max(mean - best, 0)`` where ``sd == 0``."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    if np.any(sd < 0):
        raise ValueError("sd must be non-negative")
    diff = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, diff / np.where(sd > 0, sd, 1.0), 0.0)
    ei = np.where(sd > 0, diff * norm.cdf(z) + sd * norm.pdf(z), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


class GaussianProcess:
    """Squared-exponential GP on unit-cube inputs with standardised outputs."""

    def __init__(self, noise: float = NOISE, grid=LENGTH_GRID):
        self.noise = noise
        self.grid = grid

    @staticmethod
    def _kernel(A, B, ls):
        diff = (A[:, None, :] - B[None, :, :]) / ls
        return np.exp(-0.5 * np.sum(diff * diff, axis=2))

    def fit(self, X, y) -> "GaussianProcess":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.mu = y.mean()
        self.sigma = y.std() or 1.0
        z = (y - self.mu) / self.sigma
        self.X = X
        best = None
        for ls in itertools.product(self.grid, repeat=X.shape[1]):
            ls = np.array(ls)
            K = self._kernel(X, X, ls) + self.noise * np.eye(len(X))
            try:
                cf = cho_factor(K, lower=True)
            except np.linalg.LinAlgError:
                continue
            alpha = cho_solve(cf, z)
            lml = -0.5 * z @ alpha - np.log(np.diag(cf[0])).sum()
            if best is None or lml > best[0] + 1e-12:
                best = (lml, ls, cf, alpha)
        if best is None:
            raise np.linalg.LinAlgError("no length scale gave a positive definite kernel")
        self.lml, self.length_scales, self._cf, self._alpha = best
        return self

    def predict(self, Xs):
        Xs = np.atleast_2d(np.asarray(Xs, dtype=np.float64))
        Ks = self._kernel(Xs, self.X, self.length_scales)
        mean = Ks @ self._alpha
        v = cho_solve(self._cf, Ks.T)
        var = np.maximum(1.0 - np.sum(Ks * v.T, axis=1), 0.0)
        return self.mu + self.sigma * mean, self.sigma * np.sqrt(var)


def _key(params: dict):
    return tuple(sorted(params.items()))


def _evaluate(objective, params):
    t0 = time.perf_counter()
    try:
        v = float(objective(params))
        err = "" if math.isfinite(v) else "non-finite objective"
        if err:
            v = float("nan")
    except Exception as e:  # noqa: BLE001 - any objective failure is recorded
        v, err = float("nan"), f"{type(e).__name__}: {e}".replace("\n", " ")
    return v, time.perf_counter() - t0, err


def _record(log, space, objective, u, phase):
    params = space.decode(u)
    v, dt, err = _evaluate(objective, params)
    log.trials.append({"trial": len(log.trials), "phase": phase, "params": params, "value": v,
                       "wall_time": dt, "error": err, "u": space.encode(params)})


def bho_optimize(objective, space: SearchSpace, budget: int, seed: int = 0) -> TrialLog:
    """Maximise ``objective(params)`` with a GP surrogate and expected improvement.

    The first ``max(5, budget // 5)`` trials come from a scrambled Halton
    sequence. Each later trial scores 1024 uniform candidates (drawn from a
    generator seeded by ``(seed, trial)``) by EI under a GP refitted to all
    successful trials, and evaluates the best candidate whose decoded
    parameters have not been tried. Failed trials are logged with value
    NaN and left out of the surrogate.
    """
    if budget < 5:
        raise ValueError("budget must be >= 5")
    if isinstance(space, (list, tuple)):
        space = SearchSpace.from_list(space)
    log = TrialLog()
    seen = set()
    n_warm = max(5, budget // 5)
    halton = qmc.Halton(space.d, scramble=True, seed=np.random.default_rng([seed, 0]))
    draws = 0
    while len(log.trials) < min(n_warm, budget) and draws < 64 * n_warm:
        u = halton.random(1)[0]
        draws += 1
        k = _key(space.decode(u))
        if k in seen:
            continue
        seen.add(k)
        _record(log, space, objective, u, "warm")
    while len(log.trials) < budget:
        it = len(log.trials)
        rng = np.random.default_rng([seed, 1, it])
        cand = rng.random((N_CANDIDATES, space.d))
        ok = [t for t in log.trials if not math.isnan(t["value"])]
        if len(ok) >= 2:
            gp = GaussianProcess().fit(np.array([t["u"] for t in ok]), np.array([t["value"] for t in ok]))
            mean, sd = gp.predict(cand)
            score = expected_improvement(mean, sd, max(t["value"] for t in ok))
        else:
            score = np.zeros(N_CANDIDATES)
        chosen = None
        for i in np.argsort(-score, kind="stable"):
            k = _key(space.decode(cand[i]))
            if k not in seen:
                chosen = cand[i]
                seen.add(k)
                break
        if chosen is None:
            break
        _record(log, space, objective, chosen, "gp")
    for t in log.trials:
        t.pop("u")
    return log


def random_search(objective, space: SearchSpace, budget: int, seed: int = 0) -> TrialLog:
    """Uniform random search baseline at the same budget."""
    if isinstance(space, (list, tuple)):
        space = SearchSpace.from_list(space)
    rng = np.random.default_rng([seed, 2])
    log = TrialLog()
    for u in rng.random((budget, space.d)):
        _record(log, space, objective, u, "random")
    for t in log.trials:
        t.pop("u")
    return log
