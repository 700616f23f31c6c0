"""Brute-force best root split, used to check the tree builder."""
import numpy as np


def gini(y) -> float:
    if len(y) == 0:
        return 0.0
    p = float(np.mean(y))
    return 1.0 - p * p - (1.0 - p) ** 2


def best_root(X, y, categorical):
    """(weighted child Gini, feature, threshold) with lowest-feature, lowest-threshold ties."""
    n = len(y)
    best = (gini(y), -1, np.nan)
    for j in range(X.shape[1]):
        col = X[:, j]
        u = np.unique(col)
        if u.size < 2:
            continue
        if categorical[j]:
            cands = [(sum((col == c).sum() * gini(y[col == c]) for c in u) / n, np.nan)]
        else:
            cands = []
            for t in (u[:-1] + u[1:]) / 2:
                left = col <= t
                cands.append(((left.sum() * gini(y[left]) + (~left).sum() * gini(y[~left])) / n, t))
        for g, t in cands:
            if g < best[0] - 1e-12:
                best = (g, j, t)
    return best
