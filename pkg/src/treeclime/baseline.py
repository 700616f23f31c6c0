"""Logistic regression baseline fitted by iteratively reweighted least squares."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import SchemaMismatch, _as_design


class NullLikelihoodZero(ValueError):
    pass


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_likelihood(beta, X, y) -> float:
    """Bernoulli log-likelihood with an intercept in ``beta[0]``."""
    z = beta[0] + X @ beta[1:]
    return float(np.sum(y * z - np.logaddexp(0.0, z)))


def log_likelihood_gradient(beta, X, y) -> np.ndarray:
    r = y - _sigmoid(beta[0] + X @ beta[1:])
    return np.concatenate([[r.sum()], X.T @ r])


@dataclass
class LogisticModel:
    coef: np.ndarray
    intercept: float
    feature_names: list[str]
    log_likelihood: float
    null_log_likelihood: float
    n_iter: int
    converged: bool
    l2: float

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.coef])

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.coef.size:
            raise SchemaMismatch(f"expected {self.coef.size} features, got {X.shape[1]}")
        return self.intercept + np.nan_to_num(X) @ self.coef

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision_function(X))

    def mcfadden_r2(self) -> float:
        return mcfadden_r2(self.log_likelihood, self.null_log_likelihood)

    def to_dict(self) -> dict:
        return {
            "model": "logistic",
            "intercept": self.intercept,
            "coef": dict(zip(self.feature_names, map(float, self.coef))),
            "log_likelihood": self.log_likelihood,
            "null_log_likelihood": self.null_log_likelihood,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "l2": self.l2,
        }

    @classmethod
    def from_dict(cls, d) -> "LogisticModel":
        names = list(d["coef"])
        return cls(np.array([d["coef"][k] for k in names]), d["intercept"], names, d["log_likelihood"],
                   d["null_log_likelihood"], d["n_iter"], d["converged"], d["l2"])


def null_log_likelihood(y) -> float:
    """Log-likelihood of the intercept-only model."""
    y = np.asarray(y, dtype=np.float64)
    n, k = y.size, y.sum()
    out = 0.0
    if k > 0:
        out += k * np.log(k / n)
    if k < n:
        out += (n - k) * np.log((n - k) / n)
    return float(out)


def mcfadden_r2(ll_model: float, ll_null: float) -> float:
    """``1 - ll_model / ll_null``."""
    if ll_null == 0:
        raise NullLikelihoodZero("null log-likelihood is zero (single-class target)")
    return 1.0 - ll_model / ll_null


def fit_logistic(X, y=None, l2: float = 1e-6, max_iter: int = 100, tol: float = 1e-10,
                 feature_names=None) -> LogisticModel:
    """Newton/IRLS maximisation of the ridge-penalised log-likelihood.

    The intercept is not penalised. Missing feature values are treated as
    zero. ``converged`` is False when neither the step nor the relative
    objective gain fell below ``tol`` within ``max_iter`` iterations
    (typical under separation).
    """
    X, y, _cat, names, _ = _as_design(X, y, None, feature_names)
    X = np.nan_to_num(X)
    n, p = X.shape
    A = np.hstack([np.ones((n, 1)), X])
    pen = np.full(p + 1, l2)
    pen[0] = 0.0
    rate = np.clip(y.mean(), 1e-12, 1 - 1e-12)
    beta = np.zeros(p + 1)
    beta[0] = np.log(rate / (1 - rate))
    obj = log_likelihood(beta, X, y) - 0.5 * np.sum(pen * beta**2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = _sigmoid(A @ beta)
        w = mu * (1 - mu)
        grad = A.T @ (y - mu) - pen * beta
        H = (A * w[:, None]).T @ A + np.diag(pen) + 1e-12 * np.eye(p + 1)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            new = log_likelihood(cand, X, y) - 0.5 * np.sum(pen * cand**2)
            if new >= obj - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        gain = new - obj
        beta, obj = cand, new
        if np.max(np.abs(t * step)) < tol * (1 + np.max(np.abs(beta))) or 0 <= gain < tol * (1 + abs(obj)):
            converged = True
            break
    return LogisticModel(beta[1:].copy(), float(beta[0]), names, log_likelihood(beta, X, y),
                         null_log_likelihood(y), it, converged, l2)


def predict_logistic(m: LogisticModel, row) -> float:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size != m.coef.size:
        raise SchemaMismatch(f"expected a row of {m.coef.size} features")
    return float(m.predict_proba(row[None, :])[0])

