# app/services/kernels.py
"""
Shared proximal kernel for max-affine models.

Both the inner iteration map and the primal-gap ascent reduce to

    argmin_v  <g, v> + max_i (beta_i + <c_i, v - anchor>) + phi(v) + |v - center|^2 / (2 lam)

with phi convex and proximable. The max term is dualised over the unit simplex:
for fixed weights mu the minimiser is a single prox of phi, and the concave
dual is maximised exactly for one or two pieces and by accelerated projected
gradient otherwise.
"""
import logging
from typing import NamedTuple

import numpy as np

from app.services.functions import ConvexExtendedFunction

logger = logging.getLogger(__name__)


class KernelResult(NamedTuple):
    v: np.ndarray
    weights: np.ndarray
    iterations: int


def project_simplex(v: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {mu >= 0, sum mu = radius} (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    ind = np.arange(1, v.shape[0] + 1)
    cond = u - css / ind > 0
    rho = ind[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _pair_weight(slope) -> float:
    """Maximiser over s in [0, 1] of a concave function with derivative ``slope``."""
    if slope(0.0) <= 0.0:
        return 0.0
    if slope(1.0) >= 0.0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        if hi - lo <= 1e-16:
            break
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def prox_max_affine(
    g: np.ndarray,
    slopes: np.ndarray,
    offsets: np.ndarray,
    anchor: np.ndarray,
    center: np.ndarray,
    lam: float,
    phi: ConvexExtendedFunction,
    tol: float = 1e-12,
    max_iter: int = 5000,
) -> KernelResult:
    """
    ``tol`` bounds the projected-gradient residual of the dual weights, relative
    to the dual gradient scale. When the weights end up on at most two pieces the
    pair is re-solved by bisection and kept if it passes the dual optimality check.
    """
    k = slopes.shape[0]

    def primal(mu: np.ndarray) -> np.ndarray:
        return phi.prox(center - lam * (g + mu @ slopes), lam)

    if k == 0:
        return KernelResult(phi.prox(center - lam * g, lam), np.zeros(0), 0)
    if k == 1:
        return KernelResult(primal(np.ones(1)), np.ones(1), 0)

    def dual_grad(mu: np.ndarray) -> np.ndarray:
        return offsets + slopes @ (primal(mu) - anchor)

    def on_pair(i: int, j: int) -> np.ndarray:
        def weights(s: float) -> np.ndarray:
            mu = np.zeros(k)
            mu[i] += s
            mu[j] += 1.0 - s
            return mu

        def slope(s: float) -> float:
            gr = dual_grad(weights(s))
            return gr[i] - gr[j]

        return weights(_pair_weight(slope))

    if k == 2:
        mu = on_pair(0, 1)
        return KernelResult(primal(mu), mu, 0)

    L = lam * float(np.linalg.norm(slopes, 2)) ** 2
    top = offsets >= offsets.max() - 1e-12
    mu = top / top.sum()
    if L == 0.0:
        return KernelResult(primal(mu), mu, 0)

    def residual(mu: np.ndarray) -> float:
        return float(np.linalg.norm(mu - project_simplex(mu + dual_grad(mu) / L)))

    # accelerated projected gradient with gradient-based momentum restart
    y = mu.copy()
    t = 1.0
    res = residual(mu)
    floor = tol * (1.0 + float(np.abs(dual_grad(mu)).max()) / L)
    it = 0
    while res > floor and it < max_iter:
        it += 1
        mu_new = project_simplex(y + dual_grad(y) / L)
        if float((y - mu_new) @ (mu_new - mu)) > 0.0:
            t_new, y = 1.0, mu_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = mu_new + ((t - 1.0) / t_new) * (mu_new - mu)
        mu, t = mu_new, t_new
        res = residual(mu)
    if res > floor:
        logger.debug("max-affine prox stopped at the iteration cap (residual %.3g)", res)

    # an optimum carried by at most two pieces is solved exactly
    gr = dual_grad(mu)
    carriers = set(np.flatnonzero(mu > 1e-9).tolist()) | {int(np.argmax(gr))}
    if len(carriers) <= 2:
        i, j = (sorted(carriers) * 2)[:2]
        polished = on_pair(i, j) if i != j else np.eye(k)[i]
        gp = dual_grad(polished)
        if gp.max() <= gp[polished > 0.0].max() + 1e-12 * (1.0 + np.abs(gp).max()):
            mu = polished
    return KernelResult(primal(mu), mu, it)
