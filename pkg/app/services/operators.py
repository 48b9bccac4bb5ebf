# app/services/operators.py
"""
Coupled operators T(p, x): the own unknown x and the other inequality's
unknown p as parameter. Built-ins are affine maps, gradients of convex
potentials with an affine coupling, and sums of those.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InputError, PreconditionError, UnsupportedEstimateError
from app.services.functions import DEFAULT_ACTIVITY_TOL, MaxSmoothBifunction, PSD_FLOOR
from app.services.spaces import LinearMap, as_batch, as_matrix, as_vector

logger = logging.getLogger(__name__)


class CoupledOperator:
    """Base for T : (p, x) -> own dual space."""
    kind = "abstract"
    own_dim: int
    param_dim: int

    # every built-in is jointly continuous, which gives hemicontinuity and
    # the weak upper-limit condition in finite dimensions
    hemicontinuous = True
    weakly_upper_continuous = True

    def eval(self, p, x) -> np.ndarray:
        p = as_vector(p, self.param_dim, "p")
        x = as_vector(x, self.own_dim, "x")
        return self.eval_many(p[None, :], x[None, :])[0]

    def eval_many(self, P, X) -> np.ndarray:
        raise NotImplementedError

    @property
    def growth_constant(self) -> float:
        raise NotImplementedError

    def lipschitz_x(self, radius: float) -> float:
        """Lipschitz bound of x -> T(p, x) on the ball of the given radius."""
        raise NotImplementedError

    @property
    def is_monotone(self) -> bool:
        return False

    @property
    def is_zero(self) -> bool:
        return False

    @property
    def reads_parameter(self) -> bool:
        return True


def _coupling(K, a, own_dim: int, param_dim: int) -> Tuple[np.ndarray, np.ndarray]:
    K = np.zeros((own_dim, param_dim)) if K is None else as_matrix(K, "K")
    if K.shape != (own_dim, param_dim):
        raise InputError(f"expected a {own_dim}×{param_dim} coupling matrix, got {K.shape}", path="K")
    a = np.zeros(own_dim) if a is None else as_vector(a, own_dim, "a")
    return K, a


class AffineOperator(CoupledOperator):
    """T(p, x) = P x + K p + a."""
    kind = "affine"

    def __init__(self, P, K=None, a=None, param_dim: Optional[int] = None):
        P = as_matrix(P, "P")
        if P.shape[0] != P.shape[1]:
            raise InputError(f"P must be square, got {P.shape}", path="P")
        self.own_dim = P.shape[0]
        if param_dim is None:
            if K is None:
                raise InputError("coupling dimension unknown: pass K or param_dim", path="K")
            param_dim = as_matrix(K, "K").shape[1]
        self.param_dim = int(param_dim)
        self.P = P
        self.K, self.a = _coupling(K, a, self.own_dim, self.param_dim)

    @classmethod
    def zero(cls, own_dim: int, param_dim: int) -> "AffineOperator":
        return cls(np.zeros((own_dim, own_dim)), np.zeros((own_dim, param_dim)), np.zeros(own_dim))

    def eval_many(self, P, X):
        P = as_batch(P, self.param_dim, "p")
        X = as_batch(X, self.own_dim, "x")
        return X @ self.P.T + P @ self.K.T + self.a

    @property
    def growth_constant(self) -> float:
        return float(max(np.linalg.norm(self.P, 2), np.linalg.norm(self.K, 2), np.linalg.norm(self.a)))

    def lipschitz_x(self, radius: float) -> float:
        return float(np.linalg.norm(self.P, 2))

    @property
    def min_symmetric_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.P + self.P.T)).min())

    @property
    def is_monotone(self) -> bool:
        return self.min_symmetric_eigenvalue >= PSD_FLOOR * max(1.0, np.max(np.abs(self.P)))

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.P) or np.any(self.K) or np.any(self.a))

    @property
    def reads_parameter(self) -> bool:
        return bool(np.any(self.K))


class PowerPotential:
    """(weight / exponent) * |x|^exponent, gradient weight * |x|^(exponent-2) x."""
    kind = "power"

    def __init__(self, weight: float, exponent: float, dim: int):
        if weight < 0 or exponent <= 1:
            raise InputError(f"power potential needs weight >= 0 and exponent > 1, got {weight}, {exponent}")
        self.weight = float(weight)
        self.exponent = float(exponent)
        self.dim = int(dim)

    def grad_many(self, X):
        n = np.linalg.norm(X, axis=1, keepdims=True)
        scale = np.where(n > 0, n, 1.0) ** (self.exponent - 2.0)
        return self.weight * np.where(n > 0, scale, 0.0) * X

    @property
    def growth(self) -> float:
        if self.exponent > 2.0:
            raise UnsupportedEstimateError(
                f"gradient of a degree-{self.exponent:g} power potential grows super-linearly"
            )
        # |x|^(q-1) <= 1 + |x| for 1 < q <= 2
        return self.weight

    def lipschitz(self, radius: float) -> float:
        if self.exponent >= 2.0:
            return self.weight * (self.exponent - 1.0) * max(radius, 1.0) ** (self.exponent - 2.0)
        return float("inf")


class QuadraticPotential:
    """1/2 x'Qx with Q symmetric PSD."""
    kind = "quadratic"

    def __init__(self, Q):
        Q = as_matrix(Q, "Q")
        if Q.shape[0] != Q.shape[1] or np.max(np.abs(Q - Q.T)) > 1e-12 or np.linalg.eigvalsh(Q).min() < PSD_FLOOR:
            raise InputError("quadratic potential needs a symmetric PSD matrix", path="Q")
        self.Q = Q
        self.dim = Q.shape[0]

    def grad_many(self, X):
        return X @ self.Q.T

    @property
    def growth(self) -> float:
        return float(np.linalg.norm(self.Q, 2))

    def lipschitz(self, radius: float) -> float:
        return float(np.linalg.norm(self.Q, 2))


class MonotoneGradientOperator(CoupledOperator):
    """T(p, x) = grad phi(x) + K p + a for a convex potential phi."""
    kind = "monotone_gradient"

    def __init__(self, potential, param_dim: int, K=None, a=None):
        self.potential = potential
        self.own_dim = potential.dim
        self.param_dim = int(param_dim)
        self.K, self.a = _coupling(K, a, self.own_dim, self.param_dim)

    def eval_many(self, P, X):
        P = as_batch(P, self.param_dim, "p")
        X = as_batch(X, self.own_dim, "x")
        return self.potential.grad_many(X) + P @ self.K.T + self.a

    @property
    def growth_constant(self) -> float:
        return float(max(self.potential.growth, np.linalg.norm(self.K, 2), np.linalg.norm(self.a)))

    def lipschitz_x(self, radius: float) -> float:
        return self.potential.lipschitz(radius)

    @property
    def is_monotone(self) -> bool:
        return True

    @property
    def reads_parameter(self) -> bool:
        return bool(np.any(self.K))


class CompositeOperator(CoupledOperator):
    kind = "composite"

    def __init__(self, parts: Sequence[CoupledOperator]):
        if not parts:
            raise InputError("composite operator needs at least one part")
        self.parts: List[CoupledOperator] = list(parts)
        self.own_dim = parts[0].own_dim
        self.param_dim = parts[0].param_dim
        for i, part in enumerate(parts):
            if (part.own_dim, part.param_dim) != (self.own_dim, self.param_dim):
                raise InputError("composite parts disagree on dimensions", path=f"parts[{i}]")

    def eval_many(self, P, X):
        return sum(part.eval_many(P, X) for part in self.parts)

    @property
    def growth_constant(self) -> float:
        return float(sum(part.growth_constant for part in self.parts))

    def lipschitz_x(self, radius: float) -> float:
        return float(sum(part.lipschitz_x(radius) for part in self.parts))

    @property
    def is_monotone(self) -> bool:
        return all(part.is_monotone for part in self.parts)

    @property
    def is_zero(self) -> bool:
        return all(part.is_zero for part in self.parts)

    @property
    def reads_parameter(self) -> bool:
        return any(part.reads_parameter for part in self.parts)


# ---------------------------------------------------------------------------
# coercivity profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearProfile:
    """r(t, s) = a t - b s - c."""
    a: float
    b: float = 0.0
    c: float = 0.0
    kind: str = field(init=False, default="linear")

    def __post_init__(self):
        if not self.a > 0 or self.b < 0 or self.c < 0:
            raise InputError(f"linear profile needs a > 0, b >= 0, c >= 0, got ({self.a}, {self.b}, {self.c})")

    def value(self, t: float, s: float) -> float:
        return self.a * t - self.b * s - self.c


@dataclass(frozen=True)
class TableProfile:
    """Sampled profile; evaluated at the nearest tabulated (t, s)."""
    points: Tuple[Tuple[float, float, float], ...]
    kind: str = field(init=False, default="table")

    def __post_init__(self):
        if not self.points:
            raise InputError("table profile needs at least one (t, s, r) row")
        object.__setattr__(self, "points", tuple(tuple(float(v) for v in row) for row in self.points))

    def value(self, t: float, s: float) -> float:
        grid = np.array(self.points)
        i = int(np.argmin((grid[:, 0] - t) ** 2 + (grid[:, 1] - s) ** 2))
        return float(grid[i, 2])


# ---------------------------------------------------------------------------
# pointwise quantities used by the audit
# ---------------------------------------------------------------------------

def eval_op(T: CoupledOperator, p, x) -> np.ndarray:
    return T.eval(p, x)


def growth_constant(T: CoupledOperator) -> float:
    return T.growth_constant


def coercivity_value(
    T: CoupledOperator,
    J: MaxSmoothBifunction,
    delta: LinearMap,
    gamma: LinearMap,
    p,
    x,
    activity_tol: float = DEFAULT_ACTIVITY_TOL,
) -> float:
    x = as_vector(x, T.own_dim, "x")
    p = as_vector(p, T.param_dim, "p")
    nx = np.linalg.norm(x)
    if nx == 0:
        raise PreconditionError("coercivity value is undefined at x = 0")
    gx = gamma.apply(x)
    jdir = J.clarke_dir(delta.apply(p), gx, -gx, activity_tol)
    return float((T.eval(p, x) @ x - jdir) / nx)


def coercivity_value_many(T, J, delta, gamma, P, X, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> np.ndarray:
    X = as_batch(X, T.own_dim, "x")
    nx = np.linalg.norm(X, axis=1)
    if np.any(nx == 0):
        raise PreconditionError("coercivity value is undefined at x = 0")
    GX = gamma.apply_many(X)
    jdir = J.clarke_dir_many(delta.apply_many(P), GX, -GX, activity_tol)
    return (np.einsum("ni,ni->n", T.eval_many(P, X), X) - jdir) / nx


def coercivity_certificate(T, J, delta, gamma, p, x, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> float:
    """min over subgradients xi of <T(p,x) + gamma' xi, x> / |x|."""
    x = as_vector(x, T.own_dim, "x")
    nx = np.linalg.norm(x)
    if nx == 0:
        raise PreconditionError("coercivity certificate is undefined at x = 0")
    sub = J.clarke_subdiff(delta.apply(p), gamma.apply(x), activity_tol)
    tx = T.eval(p, x) @ x
    return float(np.min(tx + sub.vertices @ gamma.apply(x)) / nx)


@dataclass
class HemicontinuityProbe:
    lambdas: List[float]
    values: List[float]
    base_value: float
    spread: float
    passed: bool


def hemicontinuity_probe(T: CoupledOperator, p, x, y, tol: float = 1e-6) -> HemicontinuityProbe:
    """lam -> <T(p, x + lam (y - x)), y - x> near lam = 0."""
    x = as_vector(x, T.own_dim, "x")
    y = as_vector(y, T.own_dim, "y")
    p = as_vector(p, T.param_dim, "p")
    d = y - x
    lambdas = [10.0 ** -k for k in range(1, 9)]
    X = x[None, :] + np.array(lambdas)[:, None] * d[None, :]
    P = np.broadcast_to(p, (len(lambdas), T.param_dim))
    values = T.eval_many(P, X) @ d
    base = float(T.eval(p, x) @ d)
    spread = float(abs(values[-1] - base))
    return HemicontinuityProbe(lambdas, values.tolist(), base, spread, spread <= tol * (1.0 + abs(base)))
