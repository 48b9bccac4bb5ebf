# app/services/functions.py
"""
Convex extended-real potentials and max-of-smooth bifunctions.

ConvexExtendedFunction is a sum of simple terms with closed-form proximal maps;
the sum's prox takes a separable shortcut when it can and otherwise runs a
parallel Dykstra-like splitting. MaxSmoothBifunction is J(p, x) = max_i phi_i(p, x)
over affine or quadratic pieces; such functions are Clarke regular, so the
generalized directional derivative is the max over active pieces of the
directional derivative and nothing has to be approximated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.errors import InfeasibleAnchorError, InputError, NumericalError
from app.services.spaces import (
    MEMBERSHIP_TOL,
    Box,
    ConvexSet,
    WholeSpace,
    as_batch,
    as_matrix,
    as_vector,
    project_intersection,
)

logger = logging.getLogger(__name__)

PSD_FLOOR = -1e-10
DEFAULT_ACTIVITY_TOL = 1e-9


def _check_symmetric_psd(Q: np.ndarray, name: str) -> None:
    if Q.shape[0] != Q.shape[1]:
        raise InputError(f"expected a square matrix, got {Q.shape}", path=name)
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.max(np.abs(Q - Q.T)) > 1e-12 * scale:
        raise InputError("matrix must be symmetric", path=name)
    if np.linalg.eigvalsh(Q).min() < PSD_FLOOR * scale:
        raise InputError("matrix must be positive semidefinite", path=name)


def soft_threshold(x: np.ndarray, t) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


# ---------------------------------------------------------------------------
# convex terms
# ---------------------------------------------------------------------------

class Term:
    kind = "term"
    dim: int

    def value_many(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def prox(self, x: np.ndarray, lam: float) -> np.ndarray:
        raise NotImplementedError

    def minorant(self) -> Tuple[float, float]:
        return 0.0, 0.0

    @property
    def is_zero(self) -> bool:
        return False


class QuadraticTerm(Term):
    """1/2 x'Qx + q'x + c with Q symmetric PSD."""
    kind = "quadratic"

    def __init__(self, Q, q=None, c: float = 0.0):
        Q = as_matrix(Q, "Q")
        _check_symmetric_psd(Q, "Q")
        self.dim = Q.shape[0]
        self.Q = Q
        self.q = np.zeros(self.dim) if q is None else as_vector(q, self.dim, "q").copy()
        self.c = float(c)

    @property
    def is_diagonal(self) -> bool:
        return not np.any(self.Q - np.diag(np.diag(self.Q)))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.Q) and not np.any(self.q) and self.c == 0.0

    def value_many(self, X):
        return 0.5 * np.einsum("ni,ij,nj->n", X, self.Q, X) + X @ self.q + self.c

    def prox(self, x, lam):
        return np.linalg.solve(np.eye(self.dim) + lam * self.Q, x - lam * self.q)

    def minorant(self):
        # 1/2 x'Qx >= 0, <q,x> >= -|q||x|
        return float(np.linalg.norm(self.q)), max(0.0, -self.c)


class WeightedL1(Term):
    kind = "l1"

    def __init__(self, weight: float, dim: int):
        if weight < 0:
            raise InputError(f"l1 weight must be nonnegative, got {weight}")
        self.weight = float(weight)
        self.dim = int(dim)

    @property
    def is_zero(self) -> bool:
        return self.weight == 0.0

    def value_many(self, X):
        return self.weight * np.abs(X).sum(axis=1)

    def prox(self, x, lam):
        return soft_threshold(x, lam * self.weight)


class NormL2(Term):
    kind = "l2"

    def __init__(self, weight: float, dim: int):
        if weight < 0:
            raise InputError(f"l2 weight must be nonnegative, got {weight}")
        self.weight = float(weight)
        self.dim = int(dim)

    @property
    def is_zero(self) -> bool:
        return self.weight == 0.0

    def value_many(self, X):
        return self.weight * np.linalg.norm(X, axis=1)

    def prox(self, x, lam):
        n = np.linalg.norm(x)
        if n <= lam * self.weight:
            return np.zeros_like(x)
        return (1.0 - lam * self.weight / n) * x


class Indicator(Term):
    kind = "indicator"

    def __init__(self, S: ConvexSet):
        self.S = S
        self.dim = S.dim

    @property
    def is_zero(self) -> bool:
        return isinstance(self.S, WholeSpace)

    def value_many(self, X):
        return np.where(self.S.contains_many(X, MEMBERSHIP_TOL), 0.0, np.inf)

    def prox(self, x, lam):
        return self.S.project(x)


class ZeroTerm(Term):
    kind = "zero"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @property
    def is_zero(self) -> bool:
        return True

    def value_many(self, X):
        return np.zeros(X.shape[0])

    def prox(self, x, lam):
        return x.copy()


def _is_separable(term: Term) -> bool:
    if isinstance(term, (WeightedL1, ZeroTerm)):
        return True
    if isinstance(term, QuadraticTerm):
        return term.is_diagonal
    if isinstance(term, Indicator):
        return isinstance(term.S, (Box, WholeSpace))
    return False


class ConvexExtendedFunction:
    """Proper convex lsc function given as a sum of terms on R^dim."""

    MAX_SPLITTING_ITER = 10_000
    SPLITTING_TOL = 1e-13

    def __init__(self, dim: int, terms: Optional[Sequence[Term]] = None):
        self.dim = int(dim)
        self.terms: List[Term] = list(terms or [])
        for t in self.terms:
            if t.dim != self.dim:
                raise InputError(f"term '{t.kind}' has dimension {t.dim}, function has {self.dim}")

    @classmethod
    def zero(cls, dim: int) -> "ConvexExtendedFunction":
        return cls(dim, [])

    @property
    def is_zero(self) -> bool:
        return all(t.is_zero for t in self.terms)

    @property
    def constraint_sets(self) -> List[ConvexSet]:
        return [t.S for t in self.terms if isinstance(t, Indicator) and not t.is_zero]

    def with_constraint(self, S: ConvexSet) -> "ConvexExtendedFunction":
        if isinstance(S, WholeSpace):
            return self
        return ConvexExtendedFunction(self.dim, self.terms + [Indicator(S)])

    # --- evaluation ------------------------------------------------------
    def value(self, x) -> float:
        x = as_vector(x, self.dim)
        return float(self.value_many(x[None, :])[0])

    def value_many(self, X) -> np.ndarray:
        X = as_batch(X, self.dim)
        total = np.zeros(X.shape[0])
        for t in self.terms:
            total = total + t.value_many(X)
        return total

    # --- proximal map ----------------------------------------------------
    def _merged_terms(self) -> List[Term]:
        quads = [t for t in self.terms if isinstance(t, QuadraticTerm)]
        rest = [t for t in self.terms if not isinstance(t, QuadraticTerm) and not t.is_zero]
        if len(quads) > 1:
            Q = sum(t.Q for t in quads)
            q = sum(t.q for t in quads)
            merged = QuadraticTerm(0.5 * (Q + Q.T), q, sum(t.c for t in quads))
            return [merged] + rest
        return quads + rest

    def _separable_prox(self, terms: List[Term], x: np.ndarray, lam: float) -> np.ndarray:
        d = np.zeros(self.dim)
        q = np.zeros(self.dim)
        w = 0.0
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for t in terms:
            if isinstance(t, QuadraticTerm):
                d += np.diag(t.Q)
                q += t.q
            elif isinstance(t, WeightedL1):
                w += t.weight
            elif isinstance(t, Indicator) and isinstance(t.S, Box):
                lo = np.maximum(lo, t.S.lo)
                hi = np.minimum(hi, t.S.hi)
        if np.any(lo > hi):
            raise InfeasibleAnchorError("intersected box constraints are empty")
        y = soft_threshold(x / lam - q, w) / (d + 1.0 / lam)
        return np.clip(y, lo, hi)

    def prox(self, x, lam: float) -> np.ndarray:
        if lam <= 0:
            raise InputError(f"prox weight must be positive, got {lam}")
        x = as_vector(x, self.dim)
        terms = self._merged_terms()
        if not terms:
            return x.copy()
        if len(terms) == 1:
            return terms[0].prox(x, lam)
        if all(_is_separable(t) for t in terms):
            return self._separable_prox(terms, x, lam)
        return self._splitting_prox(terms, x, lam)

    def _splitting_prox(self, terms: List[Term], x: np.ndarray, lam: float) -> np.ndarray:
        # parallel Dykstra-like splitting for the prox of a sum (equal weights 1/m)
        m = len(terms)
        z = [x.copy() for _ in range(m)]
        y = x.copy()
        for it in range(self.MAX_SPLITTING_ITER):
            p = [t.prox(zi, m * lam) for t, zi in zip(terms, z)]
            y_new = sum(p) / m
            for i in range(m):
                z[i] = z[i] + y_new - p[i]
            step = float(np.linalg.norm(y_new - y))
            y = y_new
            if step <= self.SPLITTING_TOL * (1.0 + np.linalg.norm(y)):
                return y
        raise NumericalError(
            "composite proximal splitting did not reach tolerance",
            {"iterations": self.MAX_SPLITTING_ITER, "residual": step, "terms": [t.kind for t in terms]},
        )

    # --- bounds ----------------------------------------------------------
    def minorant_constants(self) -> Tuple[float, float]:
        alpha, beta = 0.0, 0.0
        for t in self.terms:
            a, b = t.minorant()
            alpha += a
            beta += b
        return alpha, beta

    def find_anchor(self, S: ConvexSet) -> np.ndarray:
        """A point of dom(f) ∩ S, starting from the projection of the origin."""
        sets = [S] + self.constraint_sets
        try:
            x = project_intersection(sets, np.zeros(self.dim))
        except NumericalError as e:
            raise InfeasibleAnchorError("dom(potential) ∩ constraint set looks empty: alternating projections stall") from e
        if not all(T.contains(x, 1e-7) for T in sets):
            raise InfeasibleAnchorError("dom(potential) ∩ constraint set is empty")
        # snap to the constraint set so membership holds at the tight tolerance
        x = S.project(x)
        if not np.isfinite(self.value(x)):
            raise InfeasibleAnchorError("no point of the constraint set has a finite potential value")
        return x

    def __repr__(self):
        return f"ConvexExtendedFunction(dim={self.dim}, terms={[t.kind for t in self.terms]})"


# ---------------------------------------------------------------------------
# max-of-smooth bifunctions
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SmoothPiece:
    """phi(p, x) = 1/2 x'Qx + x'Mp + <g_p, p> + <g_x, x> + b; affine when Q and M vanish."""
    g_p: np.ndarray
    g_x: np.ndarray
    b: float = 0.0
    Q: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    kind: str = field(init=False, default="affine")

    def __post_init__(self):
        self.g_p = np.atleast_1d(np.asarray(self.g_p, dtype=float))
        self.g_x = np.atleast_1d(np.asarray(self.g_x, dtype=float))
        self.b = float(self.b)
        nx, npar = self.g_x.shape[0], self.g_p.shape[0]
        if self.Q is not None or self.M is not None:
            self.kind = "quadratic"
            self.Q = np.zeros((nx, nx)) if self.Q is None else as_matrix(self.Q, "piece.Q")
            self.M = np.zeros((nx, npar)) if self.M is None else as_matrix(self.M, "piece.M")
            if self.Q.shape != (nx, nx) or np.max(np.abs(self.Q - self.Q.T)) > 1e-12:
                raise InputError(f"quadratic piece needs a symmetric {nx}×{nx} matrix", path="piece.Q")
            if self.M.shape != (nx, npar):
                raise InputError(f"quadratic piece coupling must be {nx}×{npar}, got {self.M.shape}", path="piece.M")

    @classmethod
    def affine(cls, g_p, g_x, b: float = 0.0) -> "SmoothPiece":
        return cls(g_p=g_p, g_x=g_x, b=b)

    @classmethod
    def quadratic(cls, Q, g_p, g_x, b: float = 0.0, M=None) -> "SmoothPiece":
        Q = np.asarray(Q, dtype=float)
        return cls(g_p=g_p, g_x=g_x, b=b, Q=Q, M=M if M is not None else np.zeros((Q.shape[0], np.size(g_p))))

    @property
    def is_zero(self) -> bool:
        quad_zero = self.Q is None or (not np.any(self.Q) and not np.any(self.M))
        return quad_zero and not np.any(self.g_p) and not np.any(self.g_x) and self.b == 0.0

    @property
    def reads_parameter(self) -> bool:
        return bool(np.any(self.g_p)) or (self.M is not None and bool(np.any(self.M)))

    @property
    def is_convex_in_x(self) -> bool:
        return self.Q is None or np.linalg.eigvalsh(self.Q).min() >= PSD_FLOOR

    def values_many(self, P: np.ndarray, X: np.ndarray) -> np.ndarray:
        v = P @ self.g_p + X @ self.g_x + self.b
        if self.Q is not None:
            v = v + 0.5 * np.einsum("ni,ij,nj->n", X, self.Q, X) + np.einsum("ni,ij,nj->n", X, self.M, P)
        return v

    def grads_many(self, P: np.ndarray, X: np.ndarray) -> np.ndarray:
        G = np.broadcast_to(self.g_x, X.shape).copy()
        if self.Q is not None:
            G += X @ self.Q.T + P @ self.M.T
        return G

    def growth(self) -> float:
        terms = [np.linalg.norm(self.g_x)]
        if self.Q is not None:
            terms += [np.linalg.norm(self.Q, 2), np.linalg.norm(self.M, 2)]
        return float(max(terms))


@dataclass(frozen=True)
class SubdifferentialPolytope:
    """Convex hull of the active-piece gradients."""
    vertices: np.ndarray

    def support(self, d) -> float:
        return float(np.max(self.vertices @ np.asarray(d, dtype=float)))

    @property
    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))


class MaxSmoothBifunction:
    """J(p, x) = max_i phi_i(p, x), p in the parameter space, x in the trace space."""

    def __init__(self, pieces: Sequence[SmoothPiece], param_dim: int, arg_dim: int):
        if not pieces:
            raise InputError("a max-of-smooth function needs at least one piece")
        self.param_dim = int(param_dim)
        self.arg_dim = int(arg_dim)
        for i, piece in enumerate(pieces):
            if piece.g_p.shape[0] != self.param_dim or piece.g_x.shape[0] != self.arg_dim:
                raise InputError(
                    f"expected g_p of length {self.param_dim} and g_x of length {self.arg_dim}, "
                    f"got {piece.g_p.shape[0]} and {piece.g_x.shape[0]}",
                    path=f"pieces[{i}]",
                )
        self.pieces: List[SmoothPiece] = list(pieces)

    @classmethod
    def zero(cls, param_dim: int, arg_dim: int) -> "MaxSmoothBifunction":
        return cls([SmoothPiece.affine(np.zeros(param_dim), np.zeros(arg_dim))], param_dim, arg_dim)

    @property
    def is_zero(self) -> bool:
        return all(p.is_zero for p in self.pieces)

    @property
    def is_parameter_free(self) -> bool:
        return not any(p.reads_parameter for p in self.pieces)

    @property
    def is_convex_in_x(self) -> bool:
        return all(p.is_convex_in_x for p in self.pieces)

    @property
    def growth_constant(self) -> float:
        """c with |xi| <= c(1 + |x| + |p|) for every subgradient xi."""
        return max(p.growth() for p in self.pieces)

    # --- evaluation ------------------------------------------------------
    def _batch(self, P, X) -> Tuple[np.ndarray, np.ndarray]:
        return as_batch(P, self.param_dim, "p"), as_batch(X, self.arg_dim, "x")

    def values_many(self, P, X) -> np.ndarray:
        """Piece values, shape (N, k)."""
        P, X = self._batch(P, X)
        return np.stack([piece.values_many(P, X) for piece in self.pieces], axis=1)

    def grads_many(self, P, X) -> np.ndarray:
        """Piece gradients in x, shape (N, k, arg_dim)."""
        P, X = self._batch(P, X)
        return np.stack([piece.grads_many(P, X) for piece in self.pieces], axis=1)

    def piece_values(self, p, x) -> np.ndarray:
        p = as_vector(p, self.param_dim, "p")
        x = as_vector(x, self.arg_dim, "x")
        return self.values_many(p[None, :], x[None, :])[0]

    def piece_grads(self, p, x) -> np.ndarray:
        p = as_vector(p, self.param_dim, "p")
        x = as_vector(x, self.arg_dim, "x")
        return self.grads_many(p[None, :], x[None, :])[0]

    def value(self, p, x) -> float:
        return float(np.max(self.piece_values(p, x)))

    @staticmethod
    def active_mask(values: np.ndarray, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> np.ndarray:
        return values >= values.max(axis=-1, keepdims=True) - activity_tol

    def active_grads(self, p, x, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> np.ndarray:
        vals = self.piece_values(p, x)
        return self.piece_grads(p, x)[self.active_mask(vals, activity_tol)]

    def clarke_dir(self, p, x, d, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> float:
        d = as_vector(d, self.arg_dim, "d")
        return float(np.max(self.active_grads(p, x, activity_tol) @ d))

    def clarke_dir_many(self, P, X, D, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> np.ndarray:
        D = as_batch(D, self.arg_dim, "d")
        vals = self.values_many(P, X)
        slopes = np.einsum("nki,ni->nk", self.grads_many(P, X), D)
        return np.max(np.where(self.active_mask(vals, activity_tol), slopes, -np.inf), axis=1)

    def clarke_subdiff(self, p, x, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> SubdifferentialPolytope:
        return SubdifferentialPolytope(self.active_grads(p, x, activity_tol))

    def __repr__(self):
        return f"MaxSmoothBifunction(pieces={len(self.pieces)}, param_dim={self.param_dim}, arg_dim={self.arg_dim})"


def eval_convex(f: ConvexExtendedFunction, x) -> float:
    return f.value(x)


def prox_convex(f: ConvexExtendedFunction, x, lam: float) -> np.ndarray:
    return f.prox(x, lam)


def minorant_constants(f: ConvexExtendedFunction) -> Tuple[float, float]:
    return f.minorant_constants()


def clarke_dir(J: MaxSmoothBifunction, p, x, d, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> float:
    return J.clarke_dir(p, x, d, activity_tol)


def clarke_subdiff(J: MaxSmoothBifunction, p, x, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> SubdifferentialPolytope:
    return J.clarke_subdiff(p, x, activity_tol)
