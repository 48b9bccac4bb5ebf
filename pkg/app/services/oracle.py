# app/services/oracle.py
"""
Brute-force solution sets at desk scale.

Lattice nodes k * step inside (region ∩ C) × (region ∩ D) are screened in
vectorised chunks with cheap certificate lower bounds; only survivors get the
full multi-start certificate. Chunks go through the worker pool and are
merged in lexicographic node order, so results never depend on the worker
count.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.errors import GridBudgetError, InputError
from app.metrics import ACTIVE_WORKERS, ORACLE_NODES
from app.services.gap import GapOptions, certificate_value, resolve_radius, screen_lower_bounds
from app.services.hypotheses import HypothesisReport
from app.services.problem import CoupledProblem

logger = logging.getLogger(__name__)

MAX_NODES = 10 ** 8
MAX_DIM = 6
CHUNK = 1 << 15


@dataclass(frozen=True)
class Region:
    u_lo: np.ndarray
    u_hi: np.ndarray
    w_lo: np.ndarray
    w_hi: np.ndarray

    @classmethod
    def cube(cls, radius: float, nV: int, nE: int) -> "Region":
        return cls(-radius * np.ones(nV), radius * np.ones(nV), -radius * np.ones(nE), radius * np.ones(nE))

    @property
    def bounded(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.u_lo, self.u_hi, self.w_lo, self.w_hi))


@dataclass
class AcceptedPoint:
    u: np.ndarray
    w: np.ndarray
    gap1: float
    gap2: float


@dataclass
class OracleResult:
    grid_step: float
    region: Region
    accept_tol: float
    accepted: List[AcceptedPoint] = field(default_factory=list)
    min_joint_gap: float = float("inf")
    nodes_screened: int = 0
    survivors: int = 0
    near_misses: int = 0

    @property
    def nonempty(self) -> bool:
        return bool(self.accepted)

    @property
    def enclosing_radius(self) -> float:
        """Largest distance from the accepted points to their centroid."""
        if not self.accepted:
            return 0.0
        pts = np.array([np.concatenate([p.u, p.w]) for p in self.accepted])
        return float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))

    def nearest(self, u, w) -> float:
        if not self.accepted:
            return float("inf")
        target = np.concatenate([np.asarray(u, dtype=float), np.asarray(w, dtype=float)])
        pts = np.array([np.concatenate([p.u, p.w]) for p in self.accepted])
        return float(np.min(np.max(np.abs(pts - target), axis=1)))


@dataclass
class ProbeSummary:
    nonempty: Optional[bool]
    contained: Optional[bool]
    closed: bool
    skipped: List[str] = field(default_factory=list)
    suite_failure: bool = False

    @property
    def passed(self) -> bool:
        return self.nonempty is not False and self.contained is not False and self.closed and not self.suite_failure


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    k0 = int(np.ceil(lo / step - 1e-9))
    k1 = int(np.floor(hi / step + 1e-9))
    return np.arange(k0, k1 + 1) * step


def _lattice(lo: np.ndarray, hi: np.ndarray, step: float) -> np.ndarray:
    axes = [_axis(a, b, step) for a, b in zip(lo, hi)]
    if any(ax.size == 0 for ax in axes):
        return np.zeros((0, len(axes)))
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def _feasible_nodes(side, lo, hi, step) -> np.ndarray:
    set_lo, set_hi = side.set.bounding_box()
    nodes = _lattice(np.maximum(lo, set_lo), np.minimum(hi, set_hi), step)
    if nodes.shape[0] == 0:
        return nodes
    keep = side.set.contains_many(nodes, 1e-9) & np.isfinite(side.potential.value_many(nodes))
    return nodes[keep]


def default_region(prob: CoupledProblem, report: Optional[HypothesisReport]) -> Region:
    radius = report.invariance_radius if report is not None else None
    lo_u, hi_u = prob.C.bounding_box()
    lo_w, hi_w = prob.D.bounding_box()
    if radius is not None:
        lo_u, hi_u = np.maximum(lo_u, -radius), np.minimum(hi_u, radius)
        lo_w, hi_w = np.maximum(lo_w, -radius), np.minimum(hi_w, radius)
    region = Region(lo_u, hi_u, lo_w, hi_w)
    if not region.bounded:
        raise InputError("oracle search region is unbounded: pass a radius or declare coercivity profiles")
    return region


def lipschitz_estimate(prob: CoupledProblem, region: Region) -> float:
    """Rough Lipschitz bound of the joint certificate across the region."""
    est = 0.0
    for side, lo, hi in ((prob.side(1), region.u_lo, region.u_hi), (prob.side(2), region.w_lo, region.w_hi)):
        diam = float(np.linalg.norm(hi - lo))
        radius = float(max(np.max(np.abs(lo)), np.max(np.abs(hi)), 1.0))
        L = side.op.lipschitz_x(radius)
        if not np.isfinite(L):
            L = side.op.growth_constant
        coupling = float(np.max([np.linalg.norm(side.op.eval(np.eye(side.other_dim)[j], np.zeros(side.dim))
                                                - side.op.eval(np.zeros(side.other_dim), np.zeros(side.dim)))
                                 for j in range(side.other_dim)]))
        cj = side.J.growth_constant * side.gamma.norm ** 2
        est = max(est, (L + coupling + cj) * max(diam, 1.0))
    return max(est, 1.0)


def enumerate_solutions(
    prob: CoupledProblem,
    region: Optional[Region] = None,
    grid_step: float = 1e-2,
    accept_tol: Optional[float] = None,
    report: Optional[HypothesisReport] = None,
    opts: GapOptions = GapOptions(),
    executor: Optional[ThreadPoolExecutor] = None,
) -> OracleResult:
    L = prob.layout
    if L.nV + L.nE > MAX_DIM:
        raise InputError(f"oracle handles dim(V) + dim(E) <= {MAX_DIM}, got {L.nV + L.nE}")
    if grid_step <= 0:
        raise InputError(f"grid step must be positive, got {grid_step}")
    if region is None:
        region = default_region(prob, report)
    if not region.bounded:
        raise InputError("oracle search region is unbounded")
    s1, s2 = prob.sides

    # count before building: the full lattice can be far too large to materialise
    def count(lo, hi):
        return int(np.prod([max(0, _axis(a, b, grid_step).size) for a, b in zip(lo, hi)]))

    lo_c, hi_c = s1.set.bounding_box()
    lo_d, hi_d = s2.set.bounding_box()
    n_cells = count(np.maximum(region.u_lo, lo_c), np.minimum(region.u_hi, hi_c)) * \
        count(np.maximum(region.w_lo, lo_d), np.minimum(region.w_hi, hi_d))
    if n_cells > MAX_NODES:
        factor = (n_cells / MAX_NODES) ** (1.0 / (L.nV + L.nE))
        raise GridBudgetError(f"{n_cells} grid nodes exceed the budget of {MAX_NODES}", suggested_step=grid_step * factor * 1.01)

    U = _feasible_nodes(s1, region.u_lo, region.u_hi, grid_step)
    W = _feasible_nodes(s2, region.w_lo, region.w_hi, grid_step)
    if accept_tol is None:
        accept_tol = 10.0 * grid_step * lipschitz_estimate(prob, region)
    result = OracleResult(grid_step=grid_step, region=region, accept_tol=accept_tol)
    total = U.shape[0] * W.shape[0]
    result.nodes_screened = total
    logger.info("oracle on %s: %d x %d nodes, step %g, accept_tol %.3g", prob.name, U.shape[0], W.shape[0], grid_step, accept_tol)
    if total == 0:
        return result

    r1 = resolve_radius(prob, s1, opts)
    r2 = resolve_radius(prob, s2, opts)

    def screen(start: int) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.arange(start, min(start + CHUNK, total))
        iu, iw = np.divmod(idx, W.shape[0])
        lb1 = screen_lower_bounds(s1, U[iu], W[iw], opts, r1)
        lb2 = screen_lower_bounds(s2, W[iw], U[iu], opts, r2)
        return idx, np.maximum(lb1, lb2)

    starts = range(0, total, CHUNK)
    if executor is None:
        chunks = [screen(s) for s in starts]
    else:
        ACTIVE_WORKERS.labels(pool="oracle").inc()
        try:
            chunks = list(executor.map(screen, starts))
        finally:
            ACTIVE_WORKERS.labels(pool="oracle").dec()
    ORACLE_NODES.labels(stage="screened").inc(total)

    idx = np.concatenate([c[0] for c in chunks])
    lb = np.concatenate([c[1] for c in chunks])
    survivors = idx[lb <= accept_tol]
    result.survivors = int(survivors.size)
    ORACLE_NODES.labels(stage="certified").inc(result.survivors)

    def certify(i: int) -> Tuple[float, float]:
        iu, iw = divmod(int(i), W.shape[0])
        return (certificate_value(s1, U[iu], W[iw], opts, r1), certificate_value(s2, W[iw], U[iu], opts, r2))

    if executor is None:
        certs = [certify(i) for i in survivors]
    else:
        certs = list(executor.map(certify, survivors))
    for i, (g1, g2) in zip(survivors, certs):
        iu, iw = divmod(int(i), W.shape[0])
        joint = max(g1, g2)
        result.min_joint_gap = min(result.min_joint_gap, joint)
        if joint <= accept_tol:
            result.accepted.append(AcceptedPoint(U[iu].copy(), W[iw].copy(), g1, g2))
        elif lb[np.searchsorted(idx, i)] <= accept_tol / 2:
            result.near_misses += 1
    if not certs:
        result.min_joint_gap = float(lb.min())
    logger.info("oracle on %s: %d survivors, %d accepted, %d near misses",
                prob.name, result.survivors, len(result.accepted), result.near_misses)
    return result


def set_probes(result: OracleResult, report: Optional[HypothesisReport]) -> ProbeSummary:
    audit_passed = report is not None and report.passed
    summary = ProbeSummary(nonempty=None, contained=None, closed=result.near_misses == 0)
    if audit_passed:
        summary.nonempty = result.nonempty
        summary.suite_failure = not result.nonempty
    else:
        summary.skipped.append("nonempty: the hypothesis audit did not pass")
    if report is not None and report.bound_radius is not None:
        R = report.bound_radius
        summary.contained = all(
            np.linalg.norm(p.u) <= R and np.linalg.norm(p.w) <= R for p in result.accepted
        )
    else:
        reason = report.bound_reason if report is not None else "no hypothesis report"
        summary.skipped.append(f"containment: no a-priori bound ({reason})")
    return summary
