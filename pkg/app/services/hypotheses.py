# app/services/hypotheses.py
"""
Numerical audit of the standing assumptions and the quantitative by-products
of the existence argument: the a-priori solution bound and the invariance
radius.

Growth constants come from closed forms when the operator family has one
and from sampled ratios otherwise. Coercivity is probed on a log-spaced
radial grid along three regimes for the size of the other unknown, which
mirror how an unbounded sequence of solutions can escape (other unknown
bounded, proportional, or sublinear). Asymptotic statements can only be
falsified by finite sampling; trends are reported as such.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from app.errors import (
    BoundUnavailableError,
    InputError,
    NumericalError,
    PreconditionError,
    UnboundedSupportError,
    UnsupportedEstimateError,
)
from app.services.operators import (
    LinearProfile,
    coercivity_certificate,
    coercivity_value_many,
    hemicontinuity_probe,
)
from app.services.problem import CoupledProblem, Side

logger = logging.getLogger(__name__)

RADIAL_GRID = (1.0, 10.0, 100.0, 1000.0)
SAFETY = 1.1
WEAK_MARGIN = 0.05
FALLBACK_SEARCH_RADIUS = 1e3


def _regime_sizes(regime: str, t: float) -> List[float]:
    if regime == "bounded":
        return [0.0, 1.0]
    if regime == "proportional":
        return [t]
    return [float(np.sqrt(t))]


REGIMES = ("bounded", "proportional", "sublinear")


@dataclass
class ConstantEstimate:
    value: float
    provenance: str  # "computed" | "sampled"


@dataclass
class ProbeRow:
    regime: str
    t: float
    s: float
    observed_min: float
    claimed: Optional[float]
    ok: bool


@dataclass
class Verdict:
    status: str  # "pass-by-construction" | "not-falsified" | "falsified"
    samples: int = 0
    witness: Optional[Dict[str, Any]] = None


@dataclass
class SideAudit:
    name: str
    growth: ConstantEstimate
    nonsmooth_growth: float
    minorant: Tuple[float, float]
    probes: List[ProbeRow] = field(default_factory=list)
    coercivity: str = "no profile declared"
    coercivity_witness: Optional[Dict[str, Any]] = None
    trends: Dict[str, bool] = field(default_factory=dict)
    profile_flag: Optional[Dict[str, Any]] = None
    weak_margin: bool = False
    certificate_slack: Optional[float] = None
    hemicontinuity_spread: Optional[float] = None
    pseudomonotone: Verdict = field(default_factory=lambda: Verdict("not-falsified"))

    @property
    def operator_status(self) -> str:
        if self.pseudomonotone.status == "falsified" or self.coercivity == "falsified" or self.profile_flag:
            return "fail"
        if self.coercivity != "pass":
            return "unverified"
        return "pass"


@dataclass
class BoundDerivation:
    K0: float
    K1: float
    K2: float
    p: float
    Q: float


@dataclass
class HypothesisReport:
    first: SideAudit
    second: SideAudit
    samples: int
    seed: int
    bound_radius: Optional[float] = None
    invariance_radius: Optional[float] = None
    bound_reason: Optional[str] = None
    derivations: Dict[str, BoundDerivation] = field(default_factory=dict)
    statuses: Dict[str, str] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s == "pass" for s in self.statuses.values())

    @property
    def falsified(self) -> bool:
        return any(s == "fail" for s in self.statuses.values())

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# sampling helpers
# ---------------------------------------------------------------------------

def _unit_directions(dim: int, rng: np.random.Generator, count: int) -> np.ndarray:
    """+e_i, -e_i first, then random unit vectors, `count` rows in total."""
    fixed = np.vstack([np.eye(dim), -np.eye(dim)])
    if count <= fixed.shape[0]:
        return fixed[:count]
    extra = rng.standard_normal((count - fixed.shape[0], dim))
    extra /= np.maximum(np.linalg.norm(extra, axis=1, keepdims=True), 1e-300)
    return np.vstack([fixed, extra])


def _direction_pairs(dim_x: int, dim_p: int, rng: np.random.Generator, extra: int) -> Tuple[np.ndarray, np.ndarray]:
    """Every pairing of signed coordinate directions, then `extra` random pairs."""
    fx = np.vstack([np.eye(dim_x), -np.eye(dim_x)])
    fp = np.vstack([np.eye(dim_p), -np.eye(dim_p)])
    DX = np.repeat(fx, fp.shape[0], axis=0)
    DP = np.tile(fp, (fx.shape[0], 1))
    if extra > 0:
        RX = rng.standard_normal((extra, dim_x))
        RP = rng.standard_normal((extra, dim_p))
        RX /= np.maximum(np.linalg.norm(RX, axis=1, keepdims=True), 1e-300)
        RP /= np.maximum(np.linalg.norm(RP, axis=1, keepdims=True), 1e-300)
        DX, DP = np.vstack([DX, RX]), np.vstack([DP, RP])
    return DX, DP


def _sampled_growth(side: Side, rng: np.random.Generator, samples: int) -> float:
    radii_x = 10.0 ** rng.uniform(-2, 3, samples)
    radii_p = 10.0 ** rng.uniform(-2, 3, samples)
    X = _unit_directions(side.dim, rng, samples) * radii_x[:, None]
    P = _unit_directions(side.other_dim, rng, samples) * radii_p[:, None]
    ratio = np.linalg.norm(side.op.eval_many(P, X), axis=1) / (1.0 + radii_x + radii_p)
    return float(ratio.max()) * SAFETY


def growth_estimate(side: Side, rng: np.random.Generator, samples: int) -> ConstantEstimate:
    try:
        return ConstantEstimate(side.op.growth_constant, "computed")
    except UnsupportedEstimateError:
        logger.warning("%s operator has no closed-form growth constant; sampling it", side.name)
        return ConstantEstimate(_sampled_growth(side, rng, samples), "sampled")


# ---------------------------------------------------------------------------
# coercivity
# ---------------------------------------------------------------------------

def _tol(r: float) -> float:
    return 1e-9 * (1.0 + abs(r))


def probe_coercivity(side: Side, audit: SideAudit, rng: np.random.Generator, samples: int, activity_tol: float) -> None:
    profile = side.profile
    dirs_x, dirs_p = _direction_pairs(side.dim, side.other_dim, rng, min(samples, 64))
    minima: Dict[str, List[float]] = {regime: [] for regime in REGIMES}
    violated = False
    slack = np.inf
    for regime in REGIMES:
        for t in RADIAL_GRID:
            worst = np.inf
            for s in _regime_sizes(regime, t):
                X = t * dirs_x
                P = s * dirs_p
                vals = coercivity_value_many(side.op, side.J, side.delta, side.gamma, P, X, activity_tol)
                i = int(np.argmin(vals))
                worst = min(worst, float(vals[i]))
                claimed = profile.value(t, s) if profile is not None else None
                ok = claimed is None or bool(vals[i] >= claimed - _tol(claimed))
                audit.probes.append(ProbeRow(regime, t, s, float(vals[i]), claimed, ok))
                if not ok and not violated:
                    violated = True
                    audit.coercivity_witness = {
                        "x": X[i].tolist(), "p": P[i].tolist(), "t": t, "s": s,
                        "value": float(vals[i]), "claimed": claimed, "regime": regime,
                    }
                cert = coercivity_certificate(side.op, side.J, side.delta, side.gamma, P[i], X[i], activity_tol)
                slack = min(slack, cert - float(vals[i]))
            minima[regime].append(worst)
        m = minima[regime]
        audit.trends[regime] = bool(m[-1] > m[-2] > m[-3])
    audit.certificate_slack = float(slack)
    if profile is None:
        audit.coercivity = "no profile declared"
        return
    audit.coercivity = "falsified" if violated else "pass"

    # the claimed profile itself has to grow along each regime
    for regime in REGIMES:
        ts = RADIAL_GRID[-2:]
        rs = [profile.value(t, _regime_sizes(regime, t)[-1]) for t in ts]
        if not rs[1] > rs[0]:
            s = _regime_sizes(regime, ts[1])[-1]
            audit.profile_flag = {"regime": regime, "t": ts[1], "s": s, "r": rs[1]}
            logger.warning("%s coercivity profile does not grow along the %s regime", side.name, regime)
            break
    if isinstance(profile, LinearProfile) and profile.b > 0 and 1.0 - profile.b / profile.a < WEAK_MARGIN:
        audit.weak_margin = True
        logger.warning("%s coercivity profile has a weak margin (b/a = %.3f)", side.name, profile.b / profile.a)


# ---------------------------------------------------------------------------
# pseudomonotonicity
# ---------------------------------------------------------------------------

def _pseudomonotone_side(side: Side, other_set, samples: int, seed: int, activity_tol: float) -> Verdict:
    if side.op.is_monotone and side.J.is_convex_in_x:
        return Verdict("pass-by-construction")
    rng = np.random.default_rng(seed)
    own = [side.set.project(np.zeros(side.dim))]
    for i in range(side.dim):
        for sign in (1.0, -1.0):
            e = np.zeros(side.dim)
            e[i] = sign
            try:
                own.append(side.set.support_point(e))
            except UnboundedSupportError:
                own.append(side.set.project(10.0 * e))
    own = [p for p in own if np.isfinite(side.potential.value(p))]
    others = [other_set.project(np.zeros(side.other_dim))]

    def pairs():
        for w in others:
            for u in own:
                for v in own:
                    if not np.allclose(u, v):
                        yield u, v, w
        while True:
            u, v = side.set.sample(rng, 2)
            w = other_set.sample(rng, 1)[0]
            if np.isfinite(side.potential.value(u)) and np.isfinite(side.potential.value(v)):
                yield u, v, w

    shifts = [np.zeros(side.dim), side.rhs]
    tried = 0
    for u, v, w in pairs():
        if tried >= samples:
            break
        tried += 1
        d = v - u
        dpsi = side.potential.value(v) - side.potential.value(u)
        Au = side.op.eval(w, u)
        Av = side.op.eval(w, v)
        pu, zu = side.j_args(u, w)
        pv, zv = side.j_args(v, w)
        Su = side.J.active_grads(pu, zu, activity_tol) @ side.gamma.matrix
        Sv = side.J.active_grads(pv, zv, activity_tol) @ side.gamma.matrix
        for s in shifts:
            premise = float(np.max((Au - s) @ d + Su @ d)) + dpsi
            if premise < 0.0:
                continue
            conclusion = float(np.min((Av - s) @ d + Sv @ d)) + dpsi
            if conclusion < -1e-9:
                return Verdict("falsified", tried, {
                    "u": u.tolist(), "v": v.tolist(), "other": w.tolist(), "shift": s.tolist(),
                    "premise": premise, "conclusion": conclusion,
                })
    return Verdict("not-falsified", tried)


def falsify_pseudomonotone(prob: CoupledProblem, which: str = "first", samples: int = 1000, seed: int = 0,
                           activity_tol: float = 1e-9) -> Verdict:
    if which not in ("first", "second"):
        raise InputError(f"which must be 'first' or 'second', got {which!r}")
    side = prob.side(1 if which == "first" else 2)
    other_set = prob.D if which == "first" else prob.C
    return _pseudomonotone_side(side, other_set, samples, seed, activity_tol)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------

def _derive(side: Side, growth: float) -> BoundDerivation:
    profile = side.profile
    if not isinstance(profile, LinearProfile):
        raise BoundUnavailableError(f"{side.name} inequality has no linear coercivity profile")
    if profile.a <= profile.b:
        raise BoundUnavailableError(
            f"no finite a-priori bound derivable: {side.name} profile has a = {profile.a} <= b = {profile.b}"
        )
    n0 = float(np.linalg.norm(side.anchor))
    cJ = side.J.growth_constant
    g = side.gamma.norm
    dn = side.delta.norm
    alpha, beta = side.potential.minorant_constants()
    rhs = float(np.linalg.norm(side.rhs))
    psi0 = side.potential.value(side.anchor)
    K0 = growth * n0 + cJ * g * n0 + psi0 + beta + rhs * n0
    K1 = growth * n0 + cJ * g * g * n0 + alpha + rhs
    K2 = (growth + cJ * g * dn) * n0
    p = (profile.b + K2) / profile.a
    Q = max(1.0, (profile.c + K1 + max(K0, 0.0)) / profile.a)
    return BoundDerivation(K0=K0, K1=K1, K2=K2, p=p, Q=Q)


def solution_bound(prob: CoupledProblem, report: HypothesisReport) -> float:
    """Radius R with |u| <= R and |w| <= R for every solution pair."""
    for audit in (report.first, report.second):
        if audit.coercivity == "falsified" or audit.profile_flag:
            raise BoundUnavailableError(f"no finite a-priori bound derivable: {audit.name} coercivity data rejected by the audit")
    s1, s2 = prob.sides
    d1 = _derive(s1, report.first.growth.value)
    d2 = _derive(s2, report.second.growth.value)
    report.derivations = {"first": d1, "second": d2}
    if d1.p * d2.p >= 1.0:
        raise BoundUnavailableError(
            f"no finite a-priori bound derivable: coupling slopes {d1.p:.4g} * {d2.p:.4g} >= 1"
        )
    det = 1.0 - d1.p * d2.p
    t_star = (d1.p * d2.Q + d1.Q) / det
    s_star = (d2.p * d1.Q + d2.Q) / det
    return SAFETY * max(t_star, s_star)


def invariance_radius(prob: CoupledProblem, report: HypothesisReport) -> float:
    """m0 >= R with Gamma mapping the box of radius m0 into itself."""
    R = solution_bound(prob, report)
    d1, d2 = report.derivations["first"], report.derivations["second"]
    if max(d1.p, d2.p) >= 1.0:
        raise BoundUnavailableError(
            f"no finite invariance radius: bound map slopes {d1.p:.4g}, {d2.p:.4g} must both be < 1"
        )
    m_star = max(d1.Q / (1.0 - d1.p), d2.Q / (1.0 - d2.p))
    return max(SAFETY * m_star, R)


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

def _audit_side(prob: CoupledProblem, which: int, samples: int, seed: int, activity_tol: float) -> SideAudit:
    side = prob.side(which)
    other_set = prob.D if which == 1 else prob.C
    rng = np.random.default_rng([seed, which])
    audit = SideAudit(
        name=side.name,
        growth=growth_estimate(side, rng, samples),
        nonsmooth_growth=side.J.growth_constant,
        minorant=side.potential.minorant_constants(),
    )
    probe_coercivity(side, audit, rng, samples, activity_tol)
    x = side.set.project(np.zeros(side.dim))
    y = side.set.sample(rng, 1)[0]
    p = other_set.project(np.zeros(side.other_dim))
    audit.hemicontinuity_spread = hemicontinuity_probe(side.op, p, x, y).spread
    audit.pseudomonotone = _pseudomonotone_side(side, other_set, samples, seed + which, activity_tol)
    return audit


def audit(prob: CoupledProblem, samples: int = 200, seed: int = 0, activity_tol: float = 1e-9,
          executor: Optional[ThreadPoolExecutor] = None) -> HypothesisReport:
    if executor is not None:
        futures = [executor.submit(_audit_side, prob, i, samples, seed, activity_tol) for i in (1, 2)]
        first, second = (f.result() for f in futures)
    else:
        first, second = (_audit_side(prob, i, samples, seed, activity_tol) for i in (1, 2))
    report = HypothesisReport(first=first, second=second, samples=samples, seed=seed)

    report.statuses = {
        "H(0)": "pass",   # nonempty closed convex sets, established at load
        "H(2)": "pass",   # linear maps are bounded and compact in finite dimensions
        "H(psi)": "pass", "H(theta)": "pass",  # anchors resolved at load
        "H(J)": "pass", "H(H)": "pass",  # max-of-smooth: locally Lipschitz with linear subgradient growth
        "H(A)": first.operator_status,
        "H(B)": second.operator_status,
    }
    for audit_ in (first, second):
        if audit_.weak_margin:
            report.notes.append(f"{audit_.name} inequality: weak coercivity margin")
        if audit_.growth.provenance == "sampled":
            report.notes.append(f"{audit_.name} inequality: growth constant sampled, not computed")
    try:
        report.bound_radius = solution_bound(prob, report)
        report.invariance_radius = invariance_radius(prob, report)
    except BoundUnavailableError as e:
        report.bound_reason = str(e)
        if report.bound_radius is not None:
            report.notes.append(str(e))
    logger.info(
        "audit of %s: H(A)=%s H(B)=%s R=%s m0=%s",
        prob.name, report.statuses["H(A)"], report.statuses["H(B)"], report.bound_radius, report.invariance_radius,
    )
    return report


@lru_cache(maxsize=128)
def default_search_radius(prob: CoupledProblem) -> float:
    """Gap search radius for unbounded sets: the solution bound, else a fixed fallback."""
    try:
        report = audit(prob, samples=16, seed=0)
    except (UnsupportedEstimateError, UnboundedSupportError, PreconditionError, NumericalError) as e:
        logger.warning("audit of %s for the search radius failed (%s); using %g", prob.name, e, FALLBACK_SEARCH_RADIUS)
        return FALLBACK_SEARCH_RADIUS
    if report.invariance_radius is None:
        logger.warning("no a-priori bound for %s (%s); gap search radius falls back to %g",
                       prob.name, report.bound_reason, FALLBACK_SEARCH_RADIUS)
        return FALLBACK_SEARCH_RADIUS
    return report.invariance_radius
