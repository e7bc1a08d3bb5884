"""Local outlier factor in novelty mode.

Fit precomputes k-distances, tie-inclusive neighborhoods, and local
reachability densities over the training points only; scoring a new point
never mutates the fitted state. Distances between distinct indices are
floored at 1e-12 so duplicate points keep densities finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIST_FLOOR = 1e-12


@dataclass
class LofModel:
    k: int
    points: np.ndarray  # [n, d]
    kdist: np.ndarray  # [n] distance to the k-th nearest training neighbor
    lrd: np.ndarray  # [n] local reachability density
    neighbors: list[np.ndarray]  # tie-inclusive index sets


def _pairwise(points: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2), 0.0))
    d = np.maximum(d, DIST_FLOOR)
    np.fill_diagonal(d, 0.0)
    return d


def lof_fit(points: np.ndarray, k: int) -> LofModel:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    dist = _pairwise(points)
    kdist = np.empty(n)
    neighbors: list[np.ndarray] = []
    for i in range(n):
        others = np.delete(np.arange(n), i)
        d_i = dist[i, others]
        kdist[i] = np.sort(d_i)[k - 1]
        neighbors.append(others[d_i <= kdist[i]])
    lrd = np.empty(n)
    for i in range(n):
        nbrs = neighbors[i]
        reach = np.maximum(kdist[nbrs], dist[i, nbrs])
        lrd[i] = 1.0 / reach.mean()
    return LofModel(k, points, kdist, lrd, neighbors)


def lof_score(model: LofModel, x: np.ndarray) -> np.ndarray:
    """LOF of each query point w.r.t. the training set (novelty mode)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.empty(x.shape[0])
    for row, q in enumerate(x):
        d = np.sqrt(np.maximum(((model.points - q) ** 2).sum(axis=1), 0.0))
        d = np.maximum(d, DIST_FLOOR)
        kdist_q = np.sort(d)[model.k - 1]
        nbrs = np.flatnonzero(d <= kdist_q)
        reach = np.maximum(model.kdist[nbrs], d[nbrs])
        lrd_q = 1.0 / reach.mean()
        out[row] = model.lrd[nbrs].mean() / lrd_q
    return out
