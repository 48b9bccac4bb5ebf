# app/api/codec.py
"""
Problem and result files.

Problem files are JSON documents validated by ``ProblemFile``; every
diagnostic names the offending location as a dotted path. Floats are written
with Python's shortest round-trip repr, so serialize(parse(text)) is stable
after one normalisation pass.
"""
import hashlib
import json
import logging
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Any, NamedTuple, Optional, Union

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.api.schemas import (
    AffineOperatorSpec, AffinePieceSpec, BallSet, BifunctionSpec, BoxSet, CompositeOperatorSpec,
    ConvexFunctionSpec, GapSection, HypothesisSummary, IndicatorTermSpec, L1TermSpec, L2TermSpec,
    LayoutSpec, LinearProfileSpec, MonotoneGradientSpec, PolytopeSet, PowerPotentialSpec,
    ProblemFile, QuadraticPieceSpec, QuadraticPotentialSpec, QuadraticTermSpec, ReferenceSpec,
    ResultFile, SolverDefaults, TableProfileSpec, TraceSummary, WholeSet, ZeroTermSpec,
)
from app.errors import CertificateError, InputError
from app.services.functions import (
    ConvexExtendedFunction, Indicator, MaxSmoothBifunction, NormL2, QuadraticTerm, SmoothPiece,
    WeightedL1, ZeroTerm,
)
from app.services.gap import GapOptions, GapReport, gap_report
from app.services.hypotheses import HypothesisReport
from app.services.instances import check_kind, default_map
from app.services.operators import (
    AffineOperator, CompositeOperator, CoupledOperator, LinearProfile, MonotoneGradientOperator,
    PowerPotential, QuadraticPotential, TableProfile,
)
from app.services.outer_solver import SolveTrace
from app.services.problem import CoupledProblem
from app.services.spaces import Ball, Box, ConvexSet, LinearMap, Polytope, SpaceLayout, WholeSpace

logger = logging.getLogger(__name__)

Source = Union[bytes, str]


def _dotted(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += f".{part}" if out else str(part)
    return out or "<root>"


@contextmanager
def _located(path: str):
    try:
        yield
    except InputError as e:
        inner = f"{path}.{e.path}" if e.path else path
        raise type(e)(e.message, path=inner) from e
    except ValueError as e:
        # ragged nested lists
        raise InputError(f"malformed array: {e}", path=path) from e


def _load_json(data: Source, what: str) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise InputError(f"{what} is not UTF-8 text: {e}") from e
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise InputError(f"{what}: syntax error at line {e.lineno}, column {e.colno}: {e.msg}") from e


def _validate(model, raw: Any):
    try:
        return model.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        raise InputError(first["msg"], path=_dotted(first["loc"])) from e


def input_digest(data: Source) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return "sha256:" + hashlib.sha256(data).hexdigest()


# ——————————————————————————————————————————————
# file → objects
# ——————————————————————————————————————————————

def _set(spec, dim: int, path: str) -> ConvexSet:
    with _located(path):
        if spec is None or isinstance(spec, WholeSet):
            S = WholeSpace(dim)
        elif isinstance(spec, BoxSet):
            S = Box(spec.lo, spec.hi)
        elif isinstance(spec, BallSet):
            S = Ball(spec.center, spec.radius)
        else:
            S = Polytope(spec.A, spec.b)
    if S.dim != dim:
        raise InputError(f"expected dimension {dim}, got {S.dim}", path=path)
    return S


def _convex(spec: Optional[ConvexFunctionSpec], dim: int, path: str) -> ConvexExtendedFunction:
    if spec is None:
        return ConvexExtendedFunction.zero(dim)
    terms = []
    for i, t in enumerate(spec.terms):
        where = f"{path}.terms[{i}]"
        with _located(where):
            if isinstance(t, QuadraticTermSpec):
                terms.append(QuadraticTerm(t.Q, t.q, t.c))
            elif isinstance(t, L1TermSpec):
                terms.append(WeightedL1(t.weight, dim))
            elif isinstance(t, L2TermSpec):
                terms.append(NormL2(t.weight, dim))
            elif isinstance(t, IndicatorTermSpec):
                terms.append(Indicator(_set(t.set, dim, "set")))
            else:
                terms.append(ZeroTerm(dim))
    with _located(path):
        return ConvexExtendedFunction(dim, terms)


def _bifunction(spec: Optional[BifunctionSpec], param_dim: int, arg_dim: int, path: str) -> MaxSmoothBifunction:
    if spec is None:
        return MaxSmoothBifunction.zero(param_dim, arg_dim)
    pieces = []
    for i, p in enumerate(spec.pieces):
        with _located(f"{path}.pieces[{i}]"):
            if isinstance(p, AffinePieceSpec):
                pieces.append(SmoothPiece.affine(p.g_p, p.g_x, p.b))
            else:
                pieces.append(SmoothPiece.quadratic(p.Q, p.g_p, p.g_x, p.b, p.M))
    with _located(path):
        return MaxSmoothBifunction(pieces, param_dim, arg_dim)


def _operator(spec, own: int, param: int, path: str) -> CoupledOperator:
    if spec is None:
        return AffineOperator.zero(own, param)
    with _located(path):
        if isinstance(spec, AffineOperatorSpec):
            return AffineOperator(spec.P, spec.K, spec.a, param_dim=param)
        if isinstance(spec, MonotoneGradientSpec):
            pot = spec.potential
            if isinstance(pot, PowerPotentialSpec):
                potential = PowerPotential(pot.weight, pot.exponent, own)
            else:
                potential = QuadraticPotential(pot.Q)
            return MonotoneGradientOperator(potential, param, spec.K, spec.a)
    return CompositeOperator([_operator(p, own, param, f"{path}.parts[{i}]") for i, p in enumerate(spec.parts)])


def _map(matrix, rows: int, cols: int, path: str) -> LinearMap:
    if matrix is None:
        return default_map(rows, cols)
    with _located(path):
        return LinearMap(np.array(matrix, dtype=float))


def _profile(spec):
    if spec is None:
        return None
    if isinstance(spec, LinearProfileSpec):
        return LinearProfile(spec.a, spec.b, spec.c)
    return TableProfile(tuple(spec.points))


def build_problem(spec: ProblemFile) -> CoupledProblem:
    lay = spec.layout
    layout = SpaceLayout(
        nV=lay.nV, nE=lay.nE,
        nX=lay.nX or lay.nV, nY=lay.nY or lay.nE,
        nZ1=lay.nZ1 or lay.nE, nZ2=lay.nZ2 or lay.nV,
    )
    nV, nE = layout.nV, layout.nE
    prob = CoupledProblem(
        layout=layout,
        A=_operator(spec.A, nV, nE, "A"),
        B=_operator(spec.B, nE, nV, "B"),
        J=_bifunction(spec.J, layout.nZ1, layout.nX, "J"),
        H=_bifunction(spec.H, layout.nZ2, layout.nY, "H"),
        psi=_convex(spec.psi, nV, "psi"),
        theta=_convex(spec.theta, nE, "theta"),
        C=_set(spec.C, nV, "C"),
        D=_set(spec.D, nE, "D"),
        gamma1=_map(spec.gamma1, layout.nX, nV, "gamma1"),
        gamma2=_map(spec.gamma2, layout.nY, nE, "gamma2"),
        delta1=_map(spec.delta1, layout.nZ1, nE, "delta1"),
        delta2=_map(spec.delta2, layout.nZ2, nV, "delta2"),
        h=np.zeros(nV) if spec.h is None else np.array(spec.h, dtype=float),
        l=np.zeros(nE) if spec.l is None else np.array(spec.l, dtype=float),
        anchor_u=None if spec.anchor_u is None else np.array(spec.anchor_u, dtype=float),
        anchor_w=None if spec.anchor_w is None else np.array(spec.anchor_w, dtype=float),
        profile_A=_profile(spec.profile_A),
        profile_B=_profile(spec.profile_B),
        kind=spec.kind,
        name=spec.name,
        reference=spec.reference.model_dump() if spec.reference else None,
        solver_defaults=spec.solver.model_dump(exclude_none=True) if spec.solver else {},
        description=spec.description,
    )
    check_kind(prob)
    return prob


def parse_problem(data: Source, name: Optional[str] = None) -> CoupledProblem:
    raw = _load_json(data, "problem file")
    if isinstance(raw, dict) and "name" not in raw and name:
        raw["name"] = name
    prob = build_problem(_validate(ProblemFile, raw))
    logger.info("loaded %s (nV=%d, nE=%d, kind=%s)", prob.name, prob.layout.nV, prob.layout.nE, prob.kind)
    return prob


def load_problem(path: Union[str, Path]) -> CoupledProblem:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read problem file: {e.strerror}", path=str(path)) from e
    return parse_problem(data, name=path.stem)


# ——————————————————————————————————————————————
# objects → file
# ——————————————————————————————————————————————

def _vec(x) -> list:
    return np.asarray(x, dtype=float).tolist()


def _set_spec(S: ConvexSet):
    if isinstance(S, WholeSpace):
        return WholeSet(type="whole")
    if isinstance(S, Box):
        return BoxSet(type="box", lo=_vec(S.lo), hi=_vec(S.hi))
    if isinstance(S, Ball):
        return BallSet(type="ball", center=_vec(S.center), radius=S.radius)
    if isinstance(S, Polytope):
        return PolytopeSet(type="polytope", A=_vec(S.A), b=_vec(S.b))
    raise InputError(f"cannot serialize set of type {type(S).__name__}")


def _term_spec(t):
    if isinstance(t, QuadraticTerm):
        return QuadraticTermSpec(type="quadratic", Q=_vec(t.Q), q=_vec(t.q), c=t.c)
    if isinstance(t, WeightedL1):
        return L1TermSpec(type="l1", weight=t.weight)
    if isinstance(t, NormL2):
        return L2TermSpec(type="l2", weight=t.weight)
    if isinstance(t, Indicator):
        return IndicatorTermSpec(type="indicator", set=_set_spec(t.S))
    return ZeroTermSpec(type="zero")


def _piece_spec(p: SmoothPiece):
    if p.kind == "quadratic":
        return QuadraticPieceSpec(kind="quadratic", Q=_vec(p.Q), M=_vec(p.M), g_p=_vec(p.g_p), g_x=_vec(p.g_x), b=p.b)
    return AffinePieceSpec(kind="affine", g_p=_vec(p.g_p), g_x=_vec(p.g_x), b=p.b)


def _operator_spec(T: CoupledOperator):
    if isinstance(T, AffineOperator):
        return AffineOperatorSpec(type="affine", P=_vec(T.P), K=_vec(T.K), a=_vec(T.a))
    if isinstance(T, MonotoneGradientOperator):
        pot = T.potential
        if isinstance(pot, PowerPotential):
            pspec = PowerPotentialSpec(kind="power", weight=pot.weight, exponent=pot.exponent)
        else:
            pspec = QuadraticPotentialSpec(kind="quadratic", Q=_vec(pot.Q))
        return MonotoneGradientSpec(type="monotone_gradient", potential=pspec, K=_vec(T.K), a=_vec(T.a))
    if isinstance(T, CompositeOperator):
        return CompositeOperatorSpec(type="composite", parts=[_operator_spec(p) for p in T.parts])
    raise InputError(f"cannot serialize operator of type {type(T).__name__}")


def _profile_spec(r):
    if r is None:
        return None
    if isinstance(r, LinearProfile):
        return LinearProfileSpec(type="linear", a=r.a, b=r.b, c=r.c)
    return TableProfileSpec(type="table", points=[tuple(row) for row in r.points])


def problem_to_file(prob: CoupledProblem) -> ProblemFile:
    L = prob.layout
    return ProblemFile(
        name=prob.name,
        kind=prob.kind,
        description=prob.description,
        layout=LayoutSpec(nV=L.nV, nE=L.nE, nX=L.nX, nY=L.nY, nZ1=L.nZ1, nZ2=L.nZ2),
        A=_operator_spec(prob.A),
        B=_operator_spec(prob.B),
        J=BifunctionSpec(pieces=[_piece_spec(p) for p in prob.J.pieces]),
        H=BifunctionSpec(pieces=[_piece_spec(p) for p in prob.H.pieces]),
        psi=ConvexFunctionSpec(terms=[_term_spec(t) for t in prob.psi.terms]),
        theta=ConvexFunctionSpec(terms=[_term_spec(t) for t in prob.theta.terms]),
        C=_set_spec(prob.C),
        D=_set_spec(prob.D),
        gamma1=_vec(prob.gamma1.matrix),
        gamma2=_vec(prob.gamma2.matrix),
        delta1=_vec(prob.delta1.matrix),
        delta2=_vec(prob.delta2.matrix),
        h=_vec(prob.h),
        l=_vec(prob.l),
        anchor_u=_vec(prob.anchor_u) if prob.anchor_given[0] else None,
        anchor_w=_vec(prob.anchor_w) if prob.anchor_given[1] else None,
        profile_A=_profile_spec(prob.profile_A),
        profile_B=_profile_spec(prob.profile_B),
        solver=SolverDefaults(**prob.solver_defaults) if prob.solver_defaults else None,
        reference=ReferenceSpec(**prob.reference) if prob.reference else None,
    )


def serialize_problem(prob: CoupledProblem) -> str:
    doc = problem_to_file(prob).model_dump(mode="python", exclude_none=True)
    return json.dumps(doc, indent=2) + "\n"


# ——————————————————————————————————————————————
# result files
# ——————————————————————————————————————————————

def _opt_vec(x) -> Optional[list]:
    return None if x is None else _vec(x)


def gap_section(report: GapReport) -> GapSection:
    return GapSection(
        gap1=report.gap1, gap2=report.gap2, cert1=report.cert1, cert2=report.cert2,
        arg1=_vec(report.arg1), arg2=_vec(report.arg2),
        minty_gap1=report.mgap1, minty_gap2=report.mgap2,
        minty_arg1=_opt_vec(report.marg1), minty_arg2=_opt_vec(report.marg2),
        equation1=report.equation1, equation2=report.equation2,
        minty_heuristic=report.minty_heuristic, search_radius=report.search_radius,
        tol=report.tol_cert,
    )


def trace_summary(trace: SolveTrace) -> TraceSummary:
    return TraceSummary(
        status=trace.status,
        outer_iterations=trace.iterations,
        inner_iterations=trace.inner_iterations,
        retries=trace.retries,
        final_damping=trace.damping,
        diagnostics=list(trace.diagnostics),
        gaps=[(r.gap1, r.gap2) for r in trace.records],
    )


def hypothesis_summary(report: HypothesisReport) -> HypothesisSummary:
    return HypothesisSummary(
        statuses=dict(report.statuses),
        bound_radius=report.bound_radius,
        invariance_radius=report.invariance_radius,
        bound_reason=report.bound_reason,
        notes=list(report.notes),
    )


def build_result(
    prob: CoupledProblem,
    u,
    w,
    report: GapReport,
    digest: str,
    status: str,
    trace: Optional[SolveTrace] = None,
    hypotheses: Optional[HypothesisReport] = None,
) -> ResultFile:
    return ResultFile(
        tool_version=__version__,
        problem=prob.name,
        input_digest=digest,
        status=status,
        u=_vec(u),
        w=_vec(w),
        gaps=gap_section(report),
        trace=trace_summary(trace) if trace is not None else None,
        hypotheses=hypothesis_summary(hypotheses) if hypotheses is not None else None,
    )


def dump_result(result: ResultFile) -> str:
    # json.dumps writes inf as Infinity, which json.loads reads back
    return json.dumps(result.model_dump(mode="python"), indent=2) + "\n"


def parse_result(data: Source) -> ResultFile:
    return _validate(ResultFile, _load_json(data, "result file"))


def load_result(path: Union[str, Path]) -> ResultFile:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read result file: {e.strerror}", path=str(path)) from e
    return parse_result(data)


class Verification(NamedTuple):
    ok: bool
    report: GapReport
    drift: float
    digest_matches: Optional[bool]


def verify_result(
    prob: CoupledProblem,
    result: ResultFile,
    opts: GapOptions = GapOptions(),
    digest: Optional[str] = None,
) -> Verification:
    """
    Recompute both certificates at the stored pair using only the gap module.
    ``ok`` holds iff both are within the stored tolerance; ``drift`` is the
    largest difference to the stored certificate values.
    """
    if len(result.u) != prob.layout.nV or len(result.w) != prob.layout.nE:
        raise InputError(
            f"stored pair has dimensions ({len(result.u)}, {len(result.w)}), "
            f"problem expects ({prob.layout.nV}, {prob.layout.nE})",
            path="u",
        )
    opts = replace(opts, gap_tol=result.gaps.tol)
    report = gap_report(prob, result.u, result.w, opts, minty=False)
    drift = max(abs(report.cert1 - result.gaps.cert1), abs(report.cert2 - result.gaps.cert2))
    if not np.isfinite(drift):
        drift = 0.0 if (report.cert1, report.cert2) == (result.gaps.cert1, result.gaps.cert2) else float("inf")
    matches = None if digest is None else digest == result.input_digest
    if matches is False:
        logger.warning("result %s was produced from a different problem file", result.problem)
    if drift > 1e-12:
        logger.warning("stored certificates differ from recomputed ones by %.3g", drift)
    return Verification(report.solved, report, drift, matches)


def require_certified(verification: Verification) -> None:
    if not verification.ok:
        r = verification.report
        raise CertificateError(
            f"certificate failed: gap1 {r.cert1:.6g}, gap2 {r.cert2:.6g} exceed tol {r.tol_cert:.3g}"
        )
