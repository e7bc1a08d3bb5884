"""Isolation forest: random axis-aligned trees over subsamples.

Anomaly score s(x) = 2 ** (-E[h(x)] / c(psi)), where h(x) counts edges to
the external node reached plus the average-path correction c(m) for that
node's size. c uses exact harmonic numbers, so c(1) = 0 and c(2) = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class _Split:
    feature: int
    value: float
    left: "_Split | _Leaf"
    right: "_Split | _Leaf"


@dataclass
class _Leaf:
    size: int


@dataclass
class IforestModel:
    trees: list
    psi: int
    n_trees: int
    seed: int


@lru_cache(maxsize=None)
def avg_path_length(m: int) -> float:
    """Expected unsuccessful-search path length in a BST of m points."""
    if m <= 1:
        return 0.0
    harmonic = sum(1.0 / i for i in range(1, m))
    return 2.0 * harmonic - 2.0 * (m - 1) / m


def _build(data: np.ndarray, depth: int, limit: int, rng: np.random.Generator):
    n = data.shape[0]
    if depth >= limit or n <= 1:
        return _Leaf(n)
    lo = data.min(axis=0)
    hi = data.max(axis=0)
    spread = np.flatnonzero(hi > lo)
    if spread.size == 0:
        return _Leaf(n)
    feature = int(rng.choice(spread))
    value = float(rng.uniform(lo[feature], hi[feature]))
    left_mask = data[:, feature] < value
    return _Split(
        feature,
        value,
        _build(data[left_mask], depth + 1, limit, rng),
        _build(data[~left_mask], depth + 1, limit, rng),
    )


def iforest_fit(
    points: np.ndarray,
    n_trees: int = 100,
    psi: int | None = None,
    seed: int = 0,
) -> IforestModel:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training points")
    if psi is None:
        psi = min(256, n)
    psi = max(2, min(psi, n))
    limit = math.ceil(math.log2(psi))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        sample = points[rng.choice(n, size=psi, replace=False)]
        trees.append(_build(sample, 0, limit, rng))
    return IforestModel(trees, psi, n_trees, seed)


def _path_length(tree, x: np.ndarray) -> float:
    depth = 0
    node = tree
    while isinstance(node, _Split):
        node = node.left if x[node.feature] < node.value else node.right
        depth += 1
    return depth + avg_path_length(node.size)


def iforest_score(model: IforestModel, x: np.ndarray) -> np.ndarray:
    """Scores in (0, 1); higher means easier to isolate (more anomalous)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    c = avg_path_length(model.psi)
    out = np.empty(x.shape[0])
    for i, row in enumerate(x):
        mean_path = sum(_path_length(t, row) for t in model.trees) / len(model.trees)
        out[i] = 2.0 ** (-mean_path / c)
    return out
