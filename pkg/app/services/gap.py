# app/services/gap.py
"""
Residual certificates for the two inequalities.

The primal gap at a candidate x (other unknown p frozen) is

    sup_{v in K}  <rhs - T(p,x), v-x> - J0(dp, gx; g(v-x)) - psi(v) + psi(x)

which is a concave maximisation: a linear term minus a max of linear terms
minus a convex function. It is solved by proximal-point ascent with the
shared max-affine kernel from several starts. It vanishes exactly at
solutions. The Minty gap evaluates the operator and the nonsmooth term at
the roving point instead, is not concave, and is only estimated from below.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from app.errors import PreconditionError
from app.metrics import CERTIFICATE_FAILURES, CERTIFICATES
from app.services.kernels import prox_max_affine
from app.services.problem import CoupledProblem, Side
from app.services.spaces import Ball, project_intersection

logger = logging.getLogger(__name__)

MINTY_GRID_POINTS = {1: 201, 2: 41, 3: 13, 4: 7}
MINTY_EXACT_DIM_LIMIT = 4
SCREEN_FRACTIONS = (1.0, 0.5, 0.1, 0.01, 0.001)


@dataclass(frozen=True)
class GapOptions:
    gap_tol: float = 1e-7
    multistarts: int = 8
    seed: int = 0
    activity_tol: float = 1e-9
    search_radius: Optional[float] = None
    max_ascent_iter: int = 200


class GapResult(NamedTuple):
    gap: float
    argmax: np.ndarray


@dataclass
class GapReport:
    gap1: float
    gap2: float
    arg1: np.ndarray
    arg2: np.ndarray
    cert1: float
    cert2: float
    tol_cert: float
    mgap1: Optional[float] = None
    mgap2: Optional[float] = None
    marg1: Optional[np.ndarray] = None
    marg2: Optional[np.ndarray] = None
    equation1: bool = False
    equation2: bool = False
    minty_heuristic: bool = False
    search_radius: Optional[float] = None

    @property
    def solved(self) -> bool:
        return max(self.cert1, self.cert2) <= self.tol_cert

    @property
    def joint(self) -> float:
        return max(self.cert1, self.cert2)


# ---------------------------------------------------------------------------
# search region
# ---------------------------------------------------------------------------

class _Region:
    """K = constraint set, intersected with Ball(x, R) when the set is unbounded."""

    def __init__(self, side: Side, x: np.ndarray, radius: Optional[float]):
        self.side = side
        self.x = x
        self.bounded = side.set.is_bounded
        if self.bounded:
            self.ball = None
            self.phi = side.potential.with_constraint(side.set)
        else:
            if radius is None or not np.isfinite(radius) or radius <= 0:
                raise PreconditionError("an unbounded constraint set needs a finite search radius")
            self.ball = Ball(x, radius)
            self.phi = side.potential.with_constraint(side.set).with_constraint(self.ball)
        self.radius = radius

    @property
    def sets(self):
        return [self.side.set] if self.ball is None else [self.side.set, self.ball]

    def project(self, y: np.ndarray) -> np.ndarray:
        if self.ball is None:
            return self.side.set.project(y)
        return project_intersection(self.sets, y)

    def project_many(self, Y: np.ndarray) -> np.ndarray:
        if self.ball is None:
            return self.side.set.project_many(Y)
        return np.array([self.project(y) for y in Y]).reshape(Y.shape)

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.ball is None:
            return self.side.set.bounding_box()
        lo, hi = self.side.set.bounding_box()
        return np.maximum(lo, self.x - self.radius), np.minimum(hi, self.x + self.radius)

    def starts(self, rng: np.random.Generator, count: int) -> List[np.ndarray]:
        """x, then support points along the signed coordinate axes, then random points."""
        pts = [self.x.copy()]
        n = self.x.shape[0]
        for i in range(n):
            for sign in (1.0, -1.0):
                e = np.zeros(n)
                e[i] = sign
                if self.ball is None:
                    pts.append(self.side.set.support_point(e))
                else:
                    pts.append(self.project(self.x + self.radius * e))
        pts = pts[:max(count, 1)]
        missing = count - len(pts)
        if missing > 0:
            if self.ball is None:
                extra = self.side.set.sample(rng, missing)
            else:
                extra = self.project_many(self.ball.sample(rng, missing))
            pts.extend(extra)
        return [self._into_domain(p) for p in pts]

    def _into_domain(self, p: np.ndarray) -> np.ndarray:
        if np.isfinite(self.side.potential.value(p)):
            return p
        return self.phi.prox(p, 1.0)


def _check_candidate(side: Side, x, other) -> Tuple[np.ndarray, np.ndarray, float]:
    x = side.check_point(x, "candidate")
    other = side.check_other(other, "other")
    if not side.set.contains(x, 1e-9):
        raise PreconditionError(f"candidate of the {side.name} inequality lies outside its constraint set")
    psi_x = side.potential.value(x)
    if not np.isfinite(psi_x):
        raise PreconditionError(f"candidate of the {side.name} inequality is outside the potential's domain")
    return x, other, psi_x


def _concave_objective(side: Side, x: np.ndarray, r: np.ndarray, slopes: np.ndarray, psi_x: float):
    def phi_value(v: np.ndarray) -> float:
        d = v - x
        jdir = float(np.max(slopes @ d)) if slopes.shape[0] else 0.0
        return float(r @ d - jdir - side.potential.value(v) + psi_x)
    return phi_value


# ---------------------------------------------------------------------------
# primal gap
# ---------------------------------------------------------------------------

def side_primal_gap(side: Side, x, other, opts: GapOptions = GapOptions(), radius: Optional[float] = None) -> GapResult:
    x, other, psi_x = _check_candidate(side, x, other)
    if side.is_equation:
        if radius is None:
            raise PreconditionError("an equation side needs a finite search radius to report a gap")
        res = side.residual(x, other)
        rho = float(np.linalg.norm(res))
        arg = x + radius * res / rho if rho > 0 else x.copy()
        return GapResult(rho * radius, arg)

    region = _Region(side, x, radius)
    r = side.residual(x, other)
    slopes = side.active_slopes(x, other, opts.activity_tol)
    phi_value = _concave_objective(side, x, r, slopes, psi_x)
    zeros = np.zeros(slopes.shape[0])
    rng = np.random.default_rng(opts.seed)

    best_val, best_v = 0.0, x.copy()
    for start in region.starts(rng, opts.multistarts):
        v = start
        t = 1.0
        for _ in range(opts.max_ascent_iter):
            v_new = prox_max_affine(-r, slopes, zeros, x, v, t, region.phi).v
            moved = np.linalg.norm(v_new - v)
            v = v_new
            if moved <= 1e-12 * (1.0 + np.linalg.norm(v)):
                break
            t = min(2.0 * t, 1e8)
        val = phi_value(v)
        if val > best_val:
            best_val, best_v = val, v

    if not region.bounded and best_val > opts.gap_tol:
        if np.linalg.norm(best_v - x) >= radius * (1.0 - 1e-6):
            logger.debug("%s gap maximiser sits on the search boundary; reporting +inf", side.name)
            return GapResult(float("inf"), best_v)
    return GapResult(best_val, best_v)


def _count_certificate(side: Side, gap: float) -> float:
    CERTIFICATES.labels(inequality=side.name).inc()
    return gap


def certificate_value(side: Side, x, other, opts: GapOptions = GapOptions(), radius: Optional[float] = None) -> float:
    """Residual norm for equation sides, primal gap otherwise."""
    CERTIFICATES.labels(inequality=side.name).inc()
    if side.is_equation:
        x, other, _ = _check_candidate(side, x, other)
        return float(np.linalg.norm(side.residual(x, other)))
    return side_primal_gap(side, x, other, opts, radius).gap


def resolve_radius(prob: CoupledProblem, side: Side, opts: GapOptions) -> Optional[float]:
    if side.set.is_bounded:
        return None
    if opts.search_radius is not None:
        return opts.search_radius
    from app.services.hypotheses import default_search_radius
    return default_search_radius(prob)


def primal_gap_1(prob: CoupledProblem, u, w, opts: GapOptions = GapOptions()) -> GapResult:
    side = prob.side(1)
    return side_primal_gap(side, u, w, opts, resolve_radius(prob, side, opts))


def primal_gap_2(prob: CoupledProblem, u, w, opts: GapOptions = GapOptions()) -> GapResult:
    side = prob.side(2)
    return side_primal_gap(side, w, u, opts, resolve_radius(prob, side, opts))


# ---------------------------------------------------------------------------
# Minty gap
# ---------------------------------------------------------------------------

def _minty_values(side: Side, x: np.ndarray, other: np.ndarray, psi_x: float, Y: np.ndarray, activity_tol: float) -> np.ndarray:
    n = Y.shape[0]
    O = np.broadcast_to(other, (n, other.shape[0]))
    D = Y - x
    r = side.residual_many(Y, O)
    jdir = side.J.clarke_dir_many(side.delta.apply_many(O), side.gamma.apply_many(Y), side.gamma.apply_many(D), activity_tol)
    with np.errstate(invalid="ignore"):
        vals = np.einsum("ni,ni->n", r, D) - jdir - side.potential.value_many(Y) + psi_x
    return np.where(np.isnan(vals), -np.inf, vals)


def _compass_search(f, project, y: np.ndarray, fy: float, step: float, min_step: float = 1e-10, max_rounds: int = 2000):
    n = y.shape[0]
    dirs = np.vstack([np.eye(n), -np.eye(n)])
    rounds = 0
    while step > min_step and rounds < max_rounds:
        cand = project(y[None, :] + step * dirs)
        vals = f(cand)
        j = int(np.argmax(vals))
        if vals[j] > fy + 1e-15:
            y, fy = cand[j], float(vals[j])
        else:
            step *= 0.5
        rounds += 1
    return y, fy


def side_minty_gap(side: Side, x, other, opts: GapOptions = GapOptions(), radius: Optional[float] = None) -> GapResult:
    x, other, psi_x = _check_candidate(side, x, other)
    region = _Region(side, x, radius)
    rng = np.random.default_rng(opts.seed)

    def f(Y):
        return _minty_values(side, x, other, psi_x, Y, opts.activity_tol)

    candidates = [np.array(region.starts(rng, opts.multistarts))]
    lo, hi = region.bounding_box()
    n = x.shape[0]
    step0 = float(np.max(hi - lo)) / 10.0 if np.all(np.isfinite(hi - lo)) else 1.0
    if n <= MINTY_EXACT_DIM_LIMIT:
        m = MINTY_GRID_POINTS[n]
        axes = [np.linspace(lo[i], hi[i], m) for i in range(n)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        inside = side.set.contains_many(grid, 1e-9)
        if region.ball is not None:
            inside &= region.ball.contains_many(grid, 1e-9)
        candidates.append(grid[inside])
        step0 = max(float(np.max(hi - lo)) / (m - 1), 1e-6)
    C = np.vstack(candidates)
    vals = f(C)

    best_val, best_y = 0.0, x.copy()
    order = np.argsort(-vals, kind="stable")[: opts.multistarts]
    for i in order:
        if not np.isfinite(vals[i]):
            continue
        y, fy = _compass_search(f, region.project_many, C[i], float(vals[i]), step0)
        if fy > best_val:
            best_val, best_y = fy, y
    return GapResult(best_val, best_y)


def minty_gap_1(prob: CoupledProblem, u, w, opts: GapOptions = GapOptions()) -> GapResult:
    side = prob.side(1)
    return side_minty_gap(side, u, w, opts, resolve_radius(prob, side, opts))


def minty_gap_2(prob: CoupledProblem, u, w, opts: GapOptions = GapOptions()) -> GapResult:
    side = prob.side(2)
    return side_minty_gap(side, w, u, opts, resolve_radius(prob, side, opts))


# ---------------------------------------------------------------------------
# reports and batched screening
# ---------------------------------------------------------------------------

def gap_report(prob: CoupledProblem, u, w, opts: GapOptions = GapOptions(), minty: bool = True) -> GapReport:
    s1, s2 = prob.sides
    r1, r2 = resolve_radius(prob, s1, opts), resolve_radius(prob, s2, opts)
    g1 = side_primal_gap(s1, u, w, opts, r1)
    g2 = side_primal_gap(s2, w, u, opts, r2)
    c1 = certificate_value(s1, u, w, opts, r1) if s1.is_equation else _count_certificate(s1, g1.gap)
    c2 = certificate_value(s2, w, u, opts, r2) if s2.is_equation else _count_certificate(s2, g2.gap)
    report = GapReport(
        gap1=g1.gap, gap2=g2.gap, arg1=g1.argmax, arg2=g2.argmax,
        cert1=c1, cert2=c2, tol_cert=opts.gap_tol,
        equation1=s1.is_equation, equation2=s2.is_equation,
        search_radius=max((r for r in (r1, r2) if r is not None), default=None),
    )
    if minty:
        m1 = side_minty_gap(s1, u, w, opts, r1)
        m2 = side_minty_gap(s2, w, u, opts, r2)
        report.mgap1, report.marg1 = m1.gap, m1.argmax
        report.mgap2, report.marg2 = m2.gap, m2.argmax
        report.minty_heuristic = max(s1.dim, s2.dim) > MINTY_EXACT_DIM_LIMIT
    for side, value in ((s1, c1), (s2, c2)):
        if value > opts.gap_tol:
            CERTIFICATE_FAILURES.labels(inequality=side.name).inc()
    return report


def screen_lower_bounds(side: Side, X: np.ndarray, OTHER: np.ndarray, opts: GapOptions, radius: Optional[float]) -> np.ndarray:
    """
    Cheap certificate lower bounds for many candidates at once.

    Equation sides return their exact residual norm. Otherwise the concave
    gap objective is evaluated at points of the segments from each candidate
    toward the support points of rhs - T and of rhs - T - slope_i for every
    active piece i; every such point is feasible, so the maximum is a lower
    bound of the gap.
    """
    X = np.asarray(X, dtype=float)
    OTHER = np.asarray(OTHER, dtype=float)
    R = side.residual_many(X, OTHER)
    if side.is_equation:
        return np.linalg.norm(R, axis=1)
    psi_x = side.potential.value_many(X)
    slopes, active = side.active_slopes_many(X, OTHER, opts.activity_tol)
    directions = [R] + [R - slopes[:, i, :] for i in range(slopes.shape[1])]
    best = np.zeros(X.shape[0])
    bounded = side.set.is_bounded
    for Dir in directions:
        if bounded:
            V = side.set.support_many(Dir)
        else:
            norms = np.linalg.norm(Dir, axis=1, keepdims=True)
            V = side.set.project_many(X + radius * Dir / np.where(norms > 0, norms, 1.0))
        for frac in SCREEN_FRACTIONS:
            Y = X + frac * (V - X)
            Dv = Y - X
            jdir = np.max(np.where(active, np.einsum("nki,ni->nk", slopes, Dv), -np.inf), axis=1)
            with np.errstate(invalid="ignore"):
                vals = np.einsum("ni,ni->n", R, Dv) - jdir - side.potential.value_many(Y) + psi_x
            best = np.maximum(best, np.where(np.isnan(vals), -np.inf, vals))
    return best
