# app/services/instances.py
"""Special-case constructors and the seeded random instance generator."""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from app.errors import InputError
from app.services.functions import ConvexExtendedFunction, MaxSmoothBifunction, SmoothPiece
from app.services.operators import AffineOperator, CoupledOperator, LinearProfile
from app.services.problem import CoupledProblem, Profile
from app.services.spaces import Box, ConvexSet, LinearMap, SpaceLayout, WholeSpace

logger = logging.getLogger(__name__)

KINDS = ("i", "ii", "iii", "iv", "v", "vi", "vii")


def _dim_of(*candidates) -> Optional[int]:
    for c in candidates:
        if c is None:
            continue
        if isinstance(c, CoupledOperator):
            return c.own_dim
        if isinstance(c, (ConvexSet, ConvexExtendedFunction)):
            return c.dim
        return int(np.size(c))
    return None


def _require(ok: bool, kind: str, what: str) -> None:
    if not ok:
        raise InputError(f"kind {kind} requires {what}", path="kind")


def make_special_case(
    kind: str,
    *,
    A: Optional[CoupledOperator] = None,
    B: Optional[CoupledOperator] = None,
    J: Optional[MaxSmoothBifunction] = None,
    H: Optional[MaxSmoothBifunction] = None,
    psi: Optional[ConvexExtendedFunction] = None,
    theta: Optional[ConvexExtendedFunction] = None,
    C: Optional[ConvexSet] = None,
    D: Optional[ConvexSet] = None,
    gamma1: Optional[LinearMap] = None,
    gamma2: Optional[LinearMap] = None,
    delta1: Optional[LinearMap] = None,
    delta2: Optional[LinearMap] = None,
    h=None,
    l=None,
    profile_A: Optional[Profile] = None,
    profile_B: Optional[Profile] = None,
    name: Optional[str] = None,
) -> CoupledProblem:
    """
    Build one of the seven reductions; omitted parts become zero operators,
    zero functions, whole spaces and identity maps.

    i    both nonsmooth terms parameter-free
    ii   two coupled hemivariational inequalities (psi = theta = 0)
    iii  two coupled variational inequalities (J = H = 0)
    iv   inequality with a nonlinear equation constraint (theta = 0, H = 0, D = E)
    v    two coupled equations (everything zero, C = V, D = E)
    vi   parameter control system (B parameter-free, theta = 0, H = 0, D = E)
    vii  a single variational-hemivariational inequality (B = 0, l = 0)
    """
    if kind not in KINDS:
        raise InputError(f"unknown special case {kind!r}; expected one of {', '.join(KINDS)}", path="kind")
    nV = _dim_of(A, C, h, psi)
    nE = _dim_of(B, D, l, theta)
    if nV is None:
        raise InputError("cannot infer dim(V): pass A, C or h")
    if nE is None:
        if kind == "vii":
            nE = 1
        else:
            raise InputError("cannot infer dim(E): pass B, D or l")
    nX = J.arg_dim if J is not None else (gamma1.rows if gamma1 is not None else nV)
    nY = H.arg_dim if H is not None else (gamma2.rows if gamma2 is not None else nE)
    nZ1 = J.param_dim if J is not None else (delta1.rows if delta1 is not None else nE)
    nZ2 = H.param_dim if H is not None else (delta2.rows if delta2 is not None else nV)
    layout = SpaceLayout(nV=nV, nE=nE, nX=nX, nY=nY, nZ1=nZ1, nZ2=nZ2)

    A = A if A is not None else AffineOperator.zero(nV, nE)
    B = B if B is not None else AffineOperator.zero(nE, nV)
    J = J if J is not None else MaxSmoothBifunction.zero(nZ1, nX)
    H = H if H is not None else MaxSmoothBifunction.zero(nZ2, nY)
    psi = psi if psi is not None else ConvexExtendedFunction.zero(nV)
    theta = theta if theta is not None else ConvexExtendedFunction.zero(nE)
    C = C if C is not None else WholeSpace(nV)
    D = D if D is not None else WholeSpace(nE)
    gamma1 = gamma1 if gamma1 is not None else default_map(nX, nV)
    gamma2 = gamma2 if gamma2 is not None else default_map(nY, nE)
    delta1 = delta1 if delta1 is not None else default_map(nZ1, nE)
    delta2 = delta2 if delta2 is not None else default_map(nZ2, nV)
    h = np.zeros(nV) if h is None else np.atleast_1d(np.asarray(h, dtype=float))
    l = np.zeros(nE) if l is None else np.atleast_1d(np.asarray(l, dtype=float))

    prob = CoupledProblem(
        layout=layout, A=A, B=B, J=J, H=H, psi=psi, theta=theta, C=C, D=D,
        gamma1=gamma1, gamma2=gamma2, delta1=delta1, delta2=delta2, h=h, l=l,
        profile_A=profile_A, profile_B=profile_B, kind=kind, name=name or f"kind_{kind}",
    )
    check_kind(prob)
    return prob


def check_kind(prob: CoupledProblem) -> None:
    """Raise InputError when the problem's components contradict its kind tag."""
    kind = prob.kind
    if kind is None:
        return
    if kind not in KINDS:
        raise InputError(f"unknown special case {kind!r}; expected one of {', '.join(KINDS)}", path="kind")
    A, B, J, H = prob.A, prob.B, prob.J, prob.H
    psi, theta = prob.psi, prob.theta
    if kind == "i":
        _require(J.is_parameter_free and H.is_parameter_free, kind, "parameter-free J and H")
    if kind == "ii":
        _require(psi.is_zero and theta.is_zero, kind, "psi = theta = 0")
    if kind in ("iii", "v"):
        _require(J.is_zero and H.is_zero, kind, "J = H = 0")
    if kind in ("iv", "vi", "vii"):
        _require(theta.is_zero and H.is_zero, kind, "theta = 0 and H = 0")
    if kind == "v":
        _require(psi.is_zero and theta.is_zero, kind, "psi = theta = 0")
        _require(isinstance(prob.C, WholeSpace), kind, "C = V")
    if kind in ("iv", "v", "vi"):
        _require(isinstance(prob.D, WholeSpace), kind, "D = E")
    if kind == "vi":
        _require(not B.reads_parameter, kind, "a parameter-free B")
    if kind == "vii":
        _require(B.is_zero and not np.any(prob.l), kind, "B = 0 and l = 0")
        _require(not A.reads_parameter and J.is_parameter_free, kind, "A and J independent of the second unknown")


def default_map(rows: int, cols: int) -> LinearMap:
    """Identity when square, otherwise the leading-block embedding or restriction."""
    if rows == cols:
        return LinearMap.identity(rows)
    return LinearMap(np.eye(rows, cols))


def _spd(rng: np.random.Generator, n: int) -> Tuple[np.ndarray, float]:
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = rng.uniform(1.0, 2.0, n)
    P = (Qm * eig) @ Qm.T
    return 0.5 * (P + P.T), float(eig.min())


def _coupling_block(rng: np.random.Generator, rows: int, cols: int, norm: float) -> np.ndarray:
    K = rng.standard_normal((rows, cols))
    s = np.linalg.norm(K, 2)
    return K * (norm / s) if s > 0 and norm > 0 else np.zeros((rows, cols))


def _max_affine(rng: np.random.Generator, pieces: int, param_dim: int, arg_dim: int) -> MaxSmoothBifunction:
    out = []
    for _ in range(max(1, pieces)):
        g = rng.standard_normal(arg_dim)
        g *= rng.uniform(0.0, 1.0) / max(np.linalg.norm(g), 1e-12)
        out.append(SmoothPiece.affine(np.zeros(param_dim), g, float(rng.uniform(-0.5, 0.5))))
    return MaxSmoothBifunction(out, param_dim, arg_dim)


def random_instance(
    dims: Tuple[int, int] = (1, 1),
    coupling: float = 0.3,
    pieces: int = 3,
    seed: int = 0,
) -> CoupledProblem:
    """
    Affine operators with SPD diagonal blocks (eigenvalues in [1, 2]), coupling
    blocks of norm coupling * lambda_min, max-affine J and H with gradients of
    norm at most 1, and boxes around the origin. The attached profiles
    r(t, s) = lambda_min t - coupling lambda_min s - c_J hold by construction.
    """
    if not 0.0 <= coupling < 1.0:
        raise InputError(f"coupling strength must lie in [0, 1), got {coupling}")
    nV, nE = dims
    rng = np.random.default_rng(seed)
    PA, lam_a = _spd(rng, nV)
    PB, lam_b = _spd(rng, nE)
    KA = _coupling_block(rng, nV, nE, coupling * lam_a)
    KB = _coupling_block(rng, nE, nV, coupling * lam_b)
    J = _max_affine(rng, pieces, nE, nV)
    H = _max_affine(rng, pieces, nV, nE)
    C = Box(-rng.uniform(0.5, 1.5, nV), rng.uniform(0.5, 1.5, nV))
    D = Box(-rng.uniform(0.5, 1.5, nE), rng.uniform(0.5, 1.5, nE))
    h = rng.uniform(-1.0, 1.0, nV)
    l = rng.uniform(-1.0, 1.0, nE)
    return CoupledProblem(
        layout=SpaceLayout.simple(nV, nE),
        A=AffineOperator(PA, KA), B=AffineOperator(PB, KB), J=J, H=H,
        psi=ConvexExtendedFunction.zero(nV), theta=ConvexExtendedFunction.zero(nE),
        C=C, D=D,
        gamma1=LinearMap.identity(nV), gamma2=LinearMap.identity(nE),
        delta1=LinearMap.identity(nE), delta2=LinearMap.identity(nV),
        h=h, l=l,
        profile_A=LinearProfile(lam_a, coupling * lam_a, J.growth_constant),
        profile_B=LinearProfile(lam_b, coupling * lam_b, H.growth_constant),
        name=f"random_{seed}",
        description=f"random instance dims={nV}x{nE} coupling={coupling} pieces={pieces}",
    )
