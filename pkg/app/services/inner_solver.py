# app/services/inner_solver.py
"""
One inequality with the other unknown frozen.

Each step solves

    x+ = argmin_{v in K} <T(p, x) - rhs, v> + max_i (phi_i - J + <c_i, v - x>) + psi(v) + |v - x|^2 / (2 lam)

where the max runs over the linearisations of every piece of J at x (not only
the active ones). At x the model's directional derivative equals J0, so the
fixed points are exactly the solutions; keeping inactive pieces in the model
stops the iterate from chattering across kinks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from app.errors import InputError, NonConvergenceError
from app.metrics import INNER_ITERATIONS
from app.services.gap import GapOptions, certificate_value, resolve_radius
from app.services.kernels import prox_max_affine
from app.services.problem import CoupledProblem, Side

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InnerParams:
    lam: float = 1.0
    max_iter: int = 2000
    step_tol: float = 1e-10
    gap_tol: float = 1e-8
    oscillation_window: int = 5
    stall_checks: int = 3
    gap: GapOptions = field(default_factory=GapOptions)

    def __post_init__(self):
        if self.lam <= 0 or self.step_tol <= 0 or self.gap_tol <= 0 or self.max_iter < 1:
            raise InputError("inner parameters need lam > 0, positive tolerances and max_iter >= 1")


class InnerResult(NamedTuple):
    solution: np.ndarray
    iters: int
    final_gap: float


def iteration_map(side: Side, other: np.ndarray, x: np.ndarray, lam: float, phi) -> np.ndarray:
    offsets, slopes = side.linearization(x, other)
    g = -side.residual(x, other)
    return prox_max_affine(g, slopes, offsets, x, x, lam, phi).v


def _effective_lam(side: Side, x: np.ndarray, lam: float) -> float:
    radius = max(1.0, 2.0 * float(np.linalg.norm(x)))
    if side.set.is_bounded:
        lo, hi = side.set.bounding_box()
        radius = max(radius, float(np.max(np.abs(np.concatenate([lo, hi])))))
    L = side.op.lipschitz_x(radius)
    if np.isfinite(L) and L > 0:
        return min(lam, 1.0 / L)
    return lam


def solve_side(side: Side, other, x0, params: InnerParams = InnerParams(), radius: Optional[float] = None) -> InnerResult:
    other = side.check_other(other, "other")
    phi = side.potential.with_constraint(side.set)
    x = side.set.project(side.check_point(x0, "x0"))
    if not np.isfinite(side.potential.value(x)):
        x = phi.prox(x, 1.0)
    lam = _effective_lam(side, x, params.lam)
    gap_opts = params.gap

    prev_step = np.inf
    rising = 0
    stalls = 0
    best_x, best_gap = x.copy(), np.inf
    counter = INNER_ITERATIONS.labels(inequality=side.name)
    for k in range(1, params.max_iter + 1):
        x_new = iteration_map(side, other, x, lam, phi)
        counter.inc()
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step > params.step_tol and step >= prev_step:
            rising += 1
            if rising >= params.oscillation_window:
                lam *= 0.5
                rising = 0
                logger.debug("%s inner solve: step norm rose %d times, lam -> %.3g", side.name, params.oscillation_window, lam)
        else:
            rising = 0
        prev_step = step
        if step > params.step_tol:
            continue
        cert = certificate_value(side, x, other, gap_opts, radius)
        if cert < best_gap:
            best_x, best_gap = x.copy(), cert
        if cert <= params.gap_tol:
            logger.debug("%s inner solve certified after %d steps (gap %.3g)", side.name, k, cert)
            return InnerResult(x, k, cert)
        stalls += 1
        if stalls >= params.stall_checks:
            break
        lam *= 0.5

    if not np.isfinite(best_gap):
        best_x, best_gap = x.copy(), certificate_value(side, x, other, gap_opts, radius)
    raise NonConvergenceError(
        f"{side.name} inequality: no certified solution after {k} steps (best gap {best_gap:.3g})",
        best=best_x, best_gap=best_gap,
    )


def solve_inner_1(prob: CoupledProblem, w, u0, params: InnerParams = InnerParams()) -> InnerResult:
    side = prob.side(1)
    return solve_side(side, w, u0, params, resolve_radius(prob, side, params.gap))


def solve_inner_2(prob: CoupledProblem, u, w0, params: InnerParams = InnerParams()) -> InnerResult:
    side = prob.side(2)
    return solve_side(side, u, w0, params, resolve_radius(prob, side, params.gap))
