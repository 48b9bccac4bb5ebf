# app/services/problem.py
"""
The coupled system

    find u in C, w in D with, for all v in C and z in D,
      <A(w,u), v-u> + J0(d1 w, g1 u; g1(v-u)) + psi(v) - psi(u) >= <h, v-u>
      <B(u,w), z-w> + H0(d2 u, g2 w; g2(z-w)) + theta(z) - theta(w) >= <l, z-w>

and the per-inequality view (``Side``) that every solver and certificate
works on, so the two inequalities share one implementation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from app.errors import InfeasibleAnchorError, InputError
from app.services.functions import ConvexExtendedFunction, MaxSmoothBifunction
from app.services.operators import CoupledOperator, LinearProfile, TableProfile
from app.services.spaces import ConvexSet, LinearMap, SpaceLayout, WholeSpace, as_vector

logger = logging.getLogger(__name__)

Profile = Union[LinearProfile, TableProfile]


@dataclass(eq=False)
class Side:
    """One inequality: own unknown x, the other unknown acting as parameter."""
    index: int
    op: CoupledOperator
    J: MaxSmoothBifunction
    potential: ConvexExtendedFunction
    set: ConvexSet
    gamma: LinearMap
    delta: LinearMap
    rhs: np.ndarray
    anchor: np.ndarray
    profile: Optional[Profile]

    @property
    def name(self) -> str:
        return "first" if self.index == 1 else "second"

    @property
    def dim(self) -> int:
        return self.op.own_dim

    @property
    def other_dim(self) -> int:
        return self.op.param_dim

    @property
    def is_equation(self) -> bool:
        """Constraint set is the whole space and both extra terms vanish: B(u,w) = l."""
        return isinstance(self.set, WholeSpace) and self.potential.is_zero and self.J.is_zero

    @property
    def reads_other(self) -> bool:
        return self.op.reads_parameter or (not self.J.is_parameter_free and not self.delta.is_zero)

    def residual(self, x, other) -> np.ndarray:
        """rhs - T(other, x)."""
        return self.rhs - self.op.eval(other, x)

    def residual_many(self, X, OTHER) -> np.ndarray:
        return self.rhs - self.op.eval_many(OTHER, X)

    def j_args(self, x, other) -> Tuple[np.ndarray, np.ndarray]:
        return self.delta.apply(other), self.gamma.apply(x)

    def linearization(self, x, other) -> Tuple[np.ndarray, np.ndarray]:
        """Offsets phi_i - J <= 0 and slopes gamma' grad phi_i of every piece at x."""
        p, z = self.j_args(x, other)
        vals = self.J.piece_values(p, z)
        grads = self.J.piece_grads(p, z)
        return vals - vals.max(), grads @ self.gamma.matrix

    def active_slopes(self, x, other, activity_tol: float) -> np.ndarray:
        p, z = self.j_args(x, other)
        return self.J.active_grads(p, z, activity_tol) @ self.gamma.matrix

    def active_slopes_many(self, X, OTHER, activity_tol: float) -> Tuple[np.ndarray, np.ndarray]:
        """(N, k, dim) slopes and (N, k) activity mask."""
        P = self.delta.apply_many(OTHER)
        Z = self.gamma.apply_many(X)
        vals = self.J.values_many(P, Z)
        grads = self.J.grads_many(P, Z)
        return grads @ self.gamma.matrix, self.J.active_mask(vals, activity_tol)

    def check_point(self, x, name: str = "x") -> np.ndarray:
        return as_vector(x, self.dim, name)

    def check_other(self, p, name: str = "p") -> np.ndarray:
        return as_vector(p, self.other_dim, name)


@dataclass(eq=False)
class CoupledProblem:
    layout: SpaceLayout
    A: CoupledOperator
    B: CoupledOperator
    J: MaxSmoothBifunction
    H: MaxSmoothBifunction
    psi: ConvexExtendedFunction
    theta: ConvexExtendedFunction
    C: ConvexSet
    D: ConvexSet
    gamma1: LinearMap
    gamma2: LinearMap
    delta1: LinearMap
    delta2: LinearMap
    h: np.ndarray
    l: np.ndarray
    anchor_u: Optional[np.ndarray] = None
    anchor_w: Optional[np.ndarray] = None
    profile_A: Optional[Profile] = None
    profile_B: Optional[Profile] = None
    kind: Optional[str] = None
    name: str = "problem"
    reference: Optional[Dict[str, Any]] = None
    solver_defaults: Dict[str, Any] = field(default_factory=dict)
    description: Optional[str] = None

    def __post_init__(self):
        L = self.layout
        self._expect_map(self.gamma1, L.nX, L.nV, "gamma1", "nX×nV")
        self._expect_map(self.gamma2, L.nY, L.nE, "gamma2", "nY×nE")
        self._expect_map(self.delta1, L.nZ1, L.nE, "delta1", "nZ1×nE")
        self._expect_map(self.delta2, L.nZ2, L.nV, "delta2", "nZ2×nV")
        self._expect(self.A.own_dim == L.nV and self.A.param_dim == L.nE, "A", f"operator must map E×V with dims ({L.nE}, {L.nV})")
        self._expect(self.B.own_dim == L.nE and self.B.param_dim == L.nV, "B", f"operator must map V×E with dims ({L.nV}, {L.nE})")
        self._expect(self.J.param_dim == L.nZ1 and self.J.arg_dim == L.nX, "J", f"expected pieces on Z1×X = {L.nZ1}×{L.nX}")
        self._expect(self.H.param_dim == L.nZ2 and self.H.arg_dim == L.nY, "H", f"expected pieces on Z2×Y = {L.nZ2}×{L.nY}")
        self._expect(self.psi.dim == L.nV, "psi", f"expected dimension nV = {L.nV}")
        self._expect(self.theta.dim == L.nE, "theta", f"expected dimension nE = {L.nE}")
        self._expect(self.C.dim == L.nV, "C", f"expected dimension nV = {L.nV}")
        self._expect(self.D.dim == L.nE, "D", f"expected dimension nE = {L.nE}")
        self.h = as_vector(self.h, L.nV, "h")
        self.l = as_vector(self.l, L.nE, "l")
        self.anchor_given = (self.anchor_u is not None, self.anchor_w is not None)
        self.anchor_u = self._resolve_anchor(self.anchor_u, self.C, self.psi, L.nV, "anchor_u")
        self.anchor_w = self._resolve_anchor(self.anchor_w, self.D, self.theta, L.nE, "anchor_w")

    @staticmethod
    def _expect(ok: bool, path: str, message: str) -> None:
        if not ok:
            raise InputError(message, path=path)

    @staticmethod
    def _expect_map(M: LinearMap, rows: int, cols: int, path: str, shape_name: str) -> None:
        if (M.rows, M.cols) != (rows, cols):
            raise InputError(f"expected {shape_name} = {rows}×{cols}, got {M.rows}×{M.cols}", path=path)

    @staticmethod
    def _resolve_anchor(anchor, S: ConvexSet, f: ConvexExtendedFunction, dim: int, path: str) -> np.ndarray:
        if anchor is None:
            return f.find_anchor(S)
        anchor = as_vector(anchor, dim, path)
        if not S.contains(anchor, 1e-9) or not np.isfinite(f.value(anchor)):
            raise InfeasibleAnchorError("anchor must lie in the constraint set with a finite potential value", path=path)
        return anchor

    def side(self, which: int) -> Side:
        if which == 1:
            return Side(1, self.A, self.J, self.psi, self.C, self.gamma1, self.delta1, self.h, self.anchor_u, self.profile_A)
        if which == 2:
            return Side(2, self.B, self.H, self.theta, self.D, self.gamma2, self.delta2, self.l, self.anchor_w, self.profile_B)
        raise InputError(f"inequality index must be 1 or 2, got {which}")

    @property
    def sides(self) -> Tuple[Side, Side]:
        return self.side(1), self.side(2)

    @property
    def is_decoupled(self) -> bool:
        return not self.side(1).reads_other and not self.side(2).reads_other

    def initial_point(self, u0=None, w0=None) -> Tuple[np.ndarray, np.ndarray]:
        """Explicit start, else the supplied anchor, else the projection of the origin."""
        if u0 is None:
            u0 = self.anchor_u if self.anchor_given[0] else np.zeros(self.layout.nV)
        if w0 is None:
            w0 = self.anchor_w if self.anchor_given[1] else np.zeros(self.layout.nE)
        u = as_vector(u0, self.layout.nV, "u0")
        w = as_vector(w0, self.layout.nE, "w0")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(w))):
            raise InputError("initial point must be finite")
        return self.C.project(u), self.D.project(w)

    def __repr__(self):
        return f"CoupledProblem(name={self.name!r}, kind={self.kind!r}, nV={self.layout.nV}, nE={self.layout.nE})"
