# app/services/outer_solver.py
"""
Fixed-point driver for Gamma(u, w) = (P(w), Q(u)).

Both partial solves of one iteration run side by side (Jacobi style) in the
worker pool; the update waits for both. The Gamma image is certified before
the damped update, so an iterate that Gamma already maps onto a solution
is returned as is.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from app.errors import InputError, NonConvergenceError
from app.metrics import ACTIVE_WORKERS, SOLVES
from app.services.gap import certificate_value, resolve_radius
from app.services.inner_solver import InnerParams, InnerResult, solve_side
from app.services.problem import CoupledProblem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OuterParams:
    damping: float = 0.5
    max_outer: int = 500
    joint_tol: float = 1e-7
    inner: InnerParams = field(default_factory=InnerParams)
    seed: int = 0
    retry_on_failure: bool = True
    invariance_radius: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.damping <= 1.0:
            raise InputError(f"damping must lie in (0, 1], got {self.damping}")
        if self.max_outer < 0 or self.joint_tol <= 0:
            raise InputError("max_outer must be >= 0 and joint_tol > 0")


@dataclass
class TraceRecord:
    k: int
    u: List[float]
    w: List[float]
    gap1: float
    gap2: float
    inner_iters1: int
    inner_iters2: int
    damping: float
    inside_invariance_box: Optional[bool] = None


@dataclass
class SolveTrace:
    """Full resumable state of a coupled solve."""
    problem: CoupledProblem
    params: OuterParams
    u: np.ndarray
    w: np.ndarray
    damping: float
    records: List[TraceRecord] = field(default_factory=list)
    status: str = "running"
    retries: int = 0
    diagnostics: List[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def inner_iterations(self) -> int:
        return sum(r.inner_iters1 + r.inner_iters2 for r in self.records)

    def best_record(self) -> Optional[TraceRecord]:
        if not self.records:
            return None
        return min(self.records, key=lambda r: max(r.gap1, r.gap2))

    def validate(self) -> None:
        prob = self.problem
        if not isinstance(prob, CoupledProblem):
            raise InputError("trace does not carry a problem")
        u = np.asarray(self.u, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if u.shape != (prob.layout.nV,) or w.shape != (prob.layout.nE,):
            raise InputError("trace state does not match the problem dimensions")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
            raise InputError("trace state is not finite")
        if self.status not in ("running", "certified", "nonconvergent"):
            raise InputError(f"unknown trace status {self.status!r}")
        if not 0.0 < self.damping <= 1.0:
            raise InputError(f"trace damping {self.damping} is outside (0, 1]")


def gamma_map(
    prob: CoupledProblem,
    u,
    w,
    params: InnerParams = InnerParams(),
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[InnerResult, InnerResult]:
    """(P(w), Q(u)) warm-started at (u, w); each image carries its certificate."""
    s1, s2 = prob.sides
    r1 = resolve_radius(prob, s1, params.gap)
    r2 = resolve_radius(prob, s2, params.gap)
    if executor is None:
        return solve_side(s1, w, u, params, r1), solve_side(s2, u, w, params, r2)
    ACTIVE_WORKERS.labels(pool="inner").inc(2)
    try:
        f1 = executor.submit(solve_side, s1, w, u, params, r1)
        f2 = executor.submit(solve_side, s2, u, w, params, r2)
        return f1.result(), f2.result()
    finally:
        ACTIVE_WORKERS.labels(pool="inner").dec(2)


def within_radius(u: np.ndarray, w: np.ndarray, radius: float) -> bool:
    """Both unknowns in the closed Euclidean ball of the given radius."""
    return bool(max(np.linalg.norm(u), np.linalg.norm(w)) <= radius)


def _run(trace: SolveTrace, n_iters: int, executor: Optional[ThreadPoolExecutor]) -> None:
    prob, params = trace.problem, trace.params
    s1, s2 = prob.sides
    gap_opts = params.inner.gap
    r1 = resolve_radius(prob, s1, gap_opts)
    r2 = resolve_radius(prob, s2, gap_opts)
    m0 = params.invariance_radius
    for _ in range(n_iters):
        k = trace.iterations + 1
        try:
            res1, res2 = gamma_map(prob, trace.u, trace.w, params.inner, executor)
        except NonConvergenceError as e:
            raise NonConvergenceError(
                f"outer iteration {k}: {e}", best=e.best, best_gap=e.best_gap, trace=trace,
            ) from e
        u_hat, w_hat = res1.solution, res2.solution
        g1 = certificate_value(s1, u_hat, w_hat, gap_opts, r1)
        g2 = certificate_value(s2, w_hat, u_hat, gap_opts, r2)

        inside = None
        if m0 is not None and within_radius(trace.u, trace.w, m0):
            inside = within_radius(u_hat, w_hat, m0 * (1.0 + 1e-9))
            if not inside:
                msg = f"iteration {k}: Gamma image left the invariance box of radius {m0:.4g}"
                trace.diagnostics.append(msg)
                logger.warning("%s: %s", prob.name, msg)

        trace.records.append(TraceRecord(
            k=k, u=u_hat.tolist(), w=w_hat.tolist(), gap1=g1, gap2=g2,
            inner_iters1=res1.iters, inner_iters2=res2.iters, damping=trace.damping,
            inside_invariance_box=inside,
        ))
        logger.debug("%s outer %d: gap1 %.3g gap2 %.3g", prob.name, k, g1, g2)
        if max(g1, g2) <= params.joint_tol:
            trace.u, trace.w = u_hat, w_hat
            trace.status = "certified"
            return
        a = trace.damping
        trace.u = (1.0 - a) * trace.u + a * prob.C.project(u_hat)
        trace.w = (1.0 - a) * trace.w + a * prob.D.project(w_hat)


def _finish(trace: SolveTrace) -> Tuple[np.ndarray, np.ndarray, SolveTrace]:
    if trace.status == "certified":
        SOLVES.labels(status="certified").inc()
        logger.info("%s certified after %d outer iterations", trace.problem.name, trace.iterations)
        return trace.u, trace.w, trace
    trace.status = "nonconvergent"
    SOLVES.labels(status="nonconvergent").inc()
    best = trace.best_record()
    best_pair = (np.array(best.u), np.array(best.w)) if best else (trace.u, trace.w)
    best_gap = max(best.gap1, best.gap2) if best else float("inf")
    raise NonConvergenceError(
        f"{trace.problem.name}: no certified pair after {trace.iterations} outer iterations (best joint gap {best_gap:.3g})",
        best=best_pair, best_gap=best_gap, trace=trace,
    )


def solve_coupled(
    prob: CoupledProblem,
    u0=None,
    w0=None,
    params: OuterParams = OuterParams(),
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[np.ndarray, np.ndarray, SolveTrace]:
    u, w = prob.initial_point(u0, w0)
    trace = SolveTrace(problem=prob, params=params, u=u, w=w, damping=params.damping)
    logger.info("solving %s (damping %.3g, max_outer %d)", prob.name, params.damping, params.max_outer)
    try:
        _run(trace, params.max_outer, executor)
    except NonConvergenceError:
        SOLVES.labels(status="inner_failure").inc()
        raise
    if trace.status != "certified" and params.retry_on_failure and trace.iterations > 0:
        best = trace.best_record()
        trace.u, trace.w = prob.C.project(best.u), prob.D.project(best.w)
        trace.damping *= 0.5
        trace.retries += 1
        trace.diagnostics.append(f"retry from the best pair with damping {trace.damping:.4g}")
        logger.warning("%s: no certificate within %d iterations; retrying with damping %.4g",
                       prob.name, params.max_outer, trace.damping)
        _run(trace, params.max_outer, executor)
    return _finish(trace)


def continue_from(
    trace: SolveTrace,
    extra_iters: int,
    prob: Optional[CoupledProblem] = None,
    executor: Optional[ThreadPoolExecutor] = None,
) -> Tuple[np.ndarray, np.ndarray, SolveTrace]:
    if not isinstance(trace, SolveTrace):
        raise InputError("not a solve trace")
    if prob is not None:
        trace.problem = prob
    trace.validate()
    if trace.status == "certified":
        return trace.u, trace.w, trace
    if extra_iters < 0:
        raise InputError(f"extra_iters must be nonnegative, got {extra_iters}")
    trace.status = "running"
    trace.u = np.asarray(trace.u, dtype=float)
    trace.w = np.asarray(trace.w, dtype=float)
    _run(trace, extra_iters, executor)
    return _finish(trace)


def with_overrides(params: OuterParams, **changes) -> OuterParams:
    return replace(params, **{k: v for k, v in changes.items() if v is not None})
