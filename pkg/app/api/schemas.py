# app/api/schemas.py
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

Vector = List[float]
Matrix = List[List[float]]

FORMAT_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ——————————————————————————————————————————————
# Constraint sets
# ——————————————————————————————————————————————

class BoxSet(_Strict):
    type: Literal["box"]
    lo:   Vector
    hi:   Vector


class BallSet(_Strict):
    type:   Literal["ball"]
    center: Vector
    radius: float = Field(..., gt=0)


class PolytopeSet(_Strict):
    type: Literal["polytope"]
    A:    Matrix
    b:    Vector


class WholeSet(_Strict):
    type: Literal["whole"]


SetSpec = Annotated[Union[BoxSet, BallSet, PolytopeSet, WholeSet], Field(discriminator="type")]


# ——————————————————————————————————————————————
# Convex potentials psi, theta
# ——————————————————————————————————————————————

class QuadraticTermSpec(_Strict):
    type: Literal["quadratic"]
    Q:    Matrix
    q:    Optional[Vector] = None
    c:    float = 0.0


class L1TermSpec(_Strict):
    type:   Literal["l1"]
    weight: float = Field(..., ge=0)


class L2TermSpec(_Strict):
    type:   Literal["l2"]
    weight: float = Field(..., ge=0)


class IndicatorTermSpec(_Strict):
    type: Literal["indicator"]
    set:  SetSpec


class ZeroTermSpec(_Strict):
    type: Literal["zero"]


TermSpec = Annotated[
    Union[QuadraticTermSpec, L1TermSpec, L2TermSpec, IndicatorTermSpec, ZeroTermSpec],
    Field(discriminator="type"),
]


class ConvexFunctionSpec(_Strict):
    terms: List[TermSpec] = Field(default_factory=list)


# ——————————————————————————————————————————————
# Max-of-smooth bifunctions J, H
# ——————————————————————————————————————————————

class AffinePieceSpec(_Strict):
    kind: Literal["affine"]
    g_p:  Vector
    g_x:  Vector
    b:    float = 0.0


class QuadraticPieceSpec(_Strict):
    kind: Literal["quadratic"]
    Q:    Matrix
    M:    Optional[Matrix] = None
    g_p:  Vector
    g_x:  Vector
    b:    float = 0.0


PieceSpec = Annotated[Union[AffinePieceSpec, QuadraticPieceSpec], Field(discriminator="kind")]


class BifunctionSpec(_Strict):
    type:   Literal["maxsmooth"] = "maxsmooth"
    pieces: List[PieceSpec] = Field(..., min_length=1)


# ——————————————————————————————————————————————
# Operators A, B
# ——————————————————————————————————————————————

class PowerPotentialSpec(_Strict):
    kind:     Literal["power"]
    weight:   float = Field(..., ge=0)
    exponent: float = Field(..., gt=1)


class QuadraticPotentialSpec(_Strict):
    kind: Literal["quadratic"]
    Q:    Matrix


PotentialSpec = Annotated[Union[PowerPotentialSpec, QuadraticPotentialSpec], Field(discriminator="kind")]


class AffineOperatorSpec(_Strict):
    type: Literal["affine"]
    P:    Matrix
    K:    Optional[Matrix] = None
    a:    Optional[Vector] = None


class MonotoneGradientSpec(_Strict):
    type:      Literal["monotone_gradient"]
    potential: PotentialSpec
    K:         Optional[Matrix] = None
    a:         Optional[Vector] = None


SimpleOperatorSpec = Annotated[Union[AffineOperatorSpec, MonotoneGradientSpec], Field(discriminator="type")]


class CompositeOperatorSpec(_Strict):
    type:  Literal["composite"]
    parts: List[SimpleOperatorSpec] = Field(..., min_length=1)


OperatorSpec = Annotated[
    Union[AffineOperatorSpec, MonotoneGradientSpec, CompositeOperatorSpec],
    Field(discriminator="type"),
]


# ——————————————————————————————————————————————
# Coercivity profiles
# ——————————————————————————————————————————————

class LinearProfileSpec(_Strict):
    type: Literal["linear"]
    a:    float = Field(..., gt=0)
    b:    float = Field(0.0, ge=0)
    c:    float = Field(0.0, ge=0)


class TableProfileSpec(_Strict):
    type:   Literal["table"]
    points: List[Tuple[float, float, float]] = Field(..., min_length=1)


ProfileSpec = Annotated[Union[LinearProfileSpec, TableProfileSpec], Field(discriminator="type")]


# ——————————————————————————————————————————————
# Problem file
# ——————————————————————————————————————————————

class LayoutSpec(_Strict):
    nV:  int = Field(..., ge=1)
    nE:  int = Field(..., ge=1)
    nX:  Optional[int] = Field(None, ge=1, description="defaults to nV")
    nY:  Optional[int] = Field(None, ge=1, description="defaults to nE")
    nZ1: Optional[int] = Field(None, ge=1, description="defaults to nE")
    nZ2: Optional[int] = Field(None, ge=1, description="defaults to nV")


class SolverDefaults(_Strict):
    tol:       Optional[float] = Field(None, gt=0)
    damping:   Optional[float] = Field(None, gt=0, le=1)
    max_outer: Optional[int]   = Field(None, ge=0)
    lam:       Optional[float] = Field(None, gt=0)
    grid:      Optional[float] = Field(None, gt=0)


class ReferenceSpec(_Strict):
    u:   Vector
    w:   Vector
    tol: float = Field(1e-6, gt=0)


class ProblemFile(_Strict):
    format_version: Literal[1] = FORMAT_VERSION
    name:           str = "problem"
    kind:           Optional[Literal["i", "ii", "iii", "iv", "v", "vi", "vii"]] = None
    description:    Optional[str] = None
    layout:         LayoutSpec
    A:              Optional[OperatorSpec] = None
    B:              Optional[OperatorSpec] = None
    J:              Optional[BifunctionSpec] = None
    H:              Optional[BifunctionSpec] = None
    psi:            Optional[ConvexFunctionSpec] = None
    theta:          Optional[ConvexFunctionSpec] = None
    C:              Optional[SetSpec] = None
    D:              Optional[SetSpec] = None
    gamma1:         Optional[Matrix] = None
    gamma2:         Optional[Matrix] = None
    delta1:         Optional[Matrix] = None
    delta2:         Optional[Matrix] = None
    h:              Optional[Vector] = None
    l:              Optional[Vector] = None
    anchor_u:       Optional[Vector] = None
    anchor_w:       Optional[Vector] = None
    profile_A:      Optional[ProfileSpec] = None
    profile_B:      Optional[ProfileSpec] = None
    solver:         Optional[SolverDefaults] = None
    reference:      Optional[ReferenceSpec] = None


# ——————————————————————————————————————————————
# Result file
# ——————————————————————————————————————————————

class GapSection(_Strict):
    gap1:           float
    gap2:           float
    cert1:          float
    cert2:          float
    arg1:           Vector
    arg2:           Vector
    minty_gap1:     Optional[float]  = None
    minty_gap2:     Optional[float]  = None
    minty_arg1:     Optional[Vector] = None
    minty_arg2:     Optional[Vector] = None
    equation1:      bool = False
    equation2:      bool = False
    minty_heuristic: bool = False
    search_radius:  Optional[float] = None
    tol:            float


class TraceSummary(_Strict):
    status:            str
    outer_iterations:  int
    inner_iterations:  int
    retries:           int = 0
    final_damping:     float
    diagnostics:       List[str] = Field(default_factory=list)
    gaps:              List[Tuple[float, float]] = Field(default_factory=list)


class HypothesisSummary(_Strict):
    statuses:          Dict[str, str]
    bound_radius:      Optional[float] = None
    invariance_radius: Optional[float] = None
    bound_reason:      Optional[str] = None
    notes:             List[str] = Field(default_factory=list)


class ResultFile(_Strict):
    model_config = ConfigDict(extra="forbid", ser_json_inf_nan="constants")

    format_version: Literal[1] = FORMAT_VERSION
    tool_version:   str
    problem:        str
    input_digest:   str
    status:         Literal["certified", "nonconvergent", "inner_failure"]
    u:              Vector
    w:              Vector
    gaps:           GapSection
    trace:          Optional[TraceSummary] = None
    hypotheses:     Optional[HypothesisSummary] = None
