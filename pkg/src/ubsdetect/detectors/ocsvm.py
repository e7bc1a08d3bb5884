"""One-class SVM with RBF kernel, solved by SMO-style pairwise updates.

Dual problem: minimize 0.5 * a'Ka subject to 0 <= a_i <= 1/(nu*n) and
sum(a) = 1. The working pair is always (argmin grad over raisable alphas,
argmax grad over lowerable alphas); iteration stops when the KKT gap
g_low - g_up drops to tolerance. Score orientation: rho - sum a_i K(x_i, x),
so higher means more anomalous and the decision threshold is 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

KKT_TOL = 1e-6


@dataclass
class OcsvmModel:
    alpha: np.ndarray  # [n] dual coefficients
    rho: float
    gamma: float
    nu: float
    points: np.ndarray  # [n, d] training points


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * sq)


def scale_gamma(points: np.ndarray) -> float:
    """The 1/(d * var) heuristic over all matrix entries."""
    points = np.atleast_2d(points)
    var = float(points.var())
    return 1.0 / (points.shape[1] * max(var, 1e-12))


def ocsvm_fit(
    points: np.ndarray,
    nu: float = 0.1,
    gamma: float | None = None,
    tol: float = KKT_TOL,
    max_iter: int = 1_000_000,
) -> OcsvmModel:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training points")
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu={nu} outside (0, 1]")
    if gamma is None:
        gamma = scale_gamma(points)

    c = 1.0 / (nu * n)
    alpha = np.zeros(n)
    n_full = int(nu * n)
    alpha[:n_full] = c
    if n_full < n:
        alpha[n_full] = 1.0 - n_full * c

    kernel = rbf_kernel(points, points, gamma)
    grad = kernel @ alpha
    lo_eps = 1e-12
    for it in range(max_iter):
        raisable = alpha < c - lo_eps
        lowerable = alpha > lo_eps
        if not raisable.any() or not lowerable.any():
            break
        i = int(np.where(raisable, grad, np.inf).argmin())
        j = int(np.where(lowerable, grad, -np.inf).argmax())
        gap = grad[j] - grad[i]
        if gap <= tol:
            break
        # joint move: alpha_i += delta, alpha_j -= delta
        eta = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        limit = min(c - alpha[i], alpha[j])
        if eta > 1e-12:
            delta = min(gap / eta, limit)
        else:
            delta = limit
        alpha[i] += delta
        alpha[j] -= delta
        grad += delta * (kernel[:, i] - kernel[:, j])
    else:
        log.warning("SMO hit max_iter=%d before reaching tol=%g", max_iter, tol)

    free = (alpha > lo_eps) & (alpha < c - lo_eps)
    if free.any():
        rho = float(grad[free].mean())
    else:
        up = float(np.where(alpha < c - lo_eps, grad, np.inf).min())
        low = float(np.where(alpha > lo_eps, grad, -np.inf).max())
        if not np.isfinite(up):
            up = low
        if not np.isfinite(low):
            low = up
        rho = (up + low) / 2.0
    return OcsvmModel(alpha, rho, gamma, nu, points)


def ocsvm_score(model: OcsvmModel, x: np.ndarray) -> np.ndarray:
    """rho - sum_i alpha_i K(x_i, x); positive means outside the boundary."""
    k = rbf_kernel(np.atleast_2d(x), model.points, model.gamma)
    return model.rho - k @ model.alpha


def dual_objective(kernel: np.ndarray, alpha: np.ndarray) -> float:
    return 0.5 * float(alpha @ kernel @ alpha)


def kkt_residual(model: OcsvmModel) -> float:
    """Max violation of the stationarity conditions at the solution."""
    kernel = rbf_kernel(model.points, model.points, model.gamma)
    grad = kernel @ model.alpha
    c = 1.0 / (model.nu * len(model.alpha))
    lo_eps = 1e-12
    raisable = model.alpha < c - lo_eps
    lowerable = model.alpha > lo_eps
    if not raisable.any() or not lowerable.any():
        return 0.0
    g_up = float(grad[raisable].min())
    g_low = float(grad[lowerable].max())
    return max(g_low - g_up, 0.0)
