# app/services/spaces.py
"""
Euclidean spaces, linear coupling maps and closed convex constraint sets.

Every set here is nonempty, closed and convex by construction. Single-point
operations (``project``, ``contains``, ``support_point``) have batched
counterparts working on ``(N, dim)`` arrays, which the oracle and the audit
use to sweep grids without a Python loop per node.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, nnls

from app.errors import EmptySetError, InputError, NumericalError, UnboundedSupportError

logger = logging.getLogger(__name__)

MEMBERSHIP_TOL = 1e-9


def as_vector(x, dim: int, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise InputError(f"expected a vector of length {dim}, got shape {arr.shape}", path=name)
    return arr


def as_batch(X, dim: int, name: str = "X") -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise InputError(f"expected an array of shape (N, {dim}), got {arr.shape}", path=name)
    return arr


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    arr = np.array(M, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or 0 in arr.shape:
        raise InputError(f"expected a non-empty 2-D matrix, got shape {arr.shape}", path=name)
    if not np.all(np.isfinite(arr)):
        raise InputError("matrix entries must be finite", path=name)
    arr.setflags(write=False)
    return arr


def _frozen(v: np.ndarray) -> np.ndarray:
    out = np.array(v, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpaceLayout:
    nV: int
    nE: int
    nX: int
    nY: int
    nZ1: int
    nZ2: int

    def __post_init__(self):
        for name in ("nV", "nE", "nX", "nY", "nZ1", "nZ2"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InputError(f"dimension must be a positive integer, got {value!r}", path=f"layout.{name}")

    @classmethod
    def simple(cls, nV: int, nE: int) -> "SpaceLayout":
        """Layout with X = V, Y = E, Z1 = E, Z2 = V (identity traces and parameter maps)."""
        return cls(nV=nV, nE=nE, nX=nV, nY=nE, nZ1=nE, nZ2=nV)


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Dense real matrix acting between two Euclidean spaces."""
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_matrix(self.matrix))

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls(np.eye(n))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "LinearMap":
        return cls(np.zeros((rows, cols)))

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    @cached_property
    def norm(self) -> float:
        # largest singular value
        return float(np.linalg.norm(self.matrix, 2))

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)

    def apply(self, x) -> np.ndarray:
        return self.matrix @ as_vector(x, self.cols)

    def apply_many(self, X) -> np.ndarray:
        return as_batch(X, self.cols) @ self.matrix.T

    def adjoint(self, y) -> np.ndarray:
        return self.matrix.T @ as_vector(y, self.rows)


class ConvexSet(ABC):
    """Nonempty closed convex subset of R^dim."""
    kind: str = "abstract"

    def __init__(self, dim: int):
        if dim < 1:
            raise InputError(f"set dimension must be positive, got {dim}")
        self.dim = int(dim)

    # --- single points -------------------------------------------------
    def project(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        return self._project(x)

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = as_vector(x, self.dim)
        return bool(np.linalg.norm(x - self._project(x)) <= tol)

    def distance(self, x) -> float:
        x = as_vector(x, self.dim)
        return float(np.linalg.norm(x - self._project(x)))

    def support_point(self, g) -> np.ndarray:
        g = as_vector(g, self.dim, "g")
        return self._support(g)

    # --- batches -------------------------------------------------------
    def project_many(self, X) -> np.ndarray:
        X = as_batch(X, self.dim)
        return np.array([self._project(x) for x in X]).reshape(X.shape)

    def contains_many(self, X, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
        X = as_batch(X, self.dim)
        return np.linalg.norm(X - self.project_many(X), axis=1) <= tol

    def support_many(self, G) -> np.ndarray:
        G = as_batch(G, self.dim)
        return np.array([self._support(g) for g in G]).reshape(G.shape)

    # --- shape ---------------------------------------------------------
    @property
    @abstractmethod
    def is_bounded(self) -> bool: ...

    @abstractmethod
    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]: ...

    @property
    def diameter(self) -> float:
        if not self.is_bounded:
            return float("inf")
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Points of the set (not necessarily uniform): box samples pulled back by projection."""
        lo, hi = self.bounding_box()
        lo = np.where(np.isfinite(lo), lo, -10.0)
        hi = np.where(np.isfinite(hi), hi, 10.0)
        raw = lo + (hi - lo) * rng.random((n, self.dim))
        return self.project_many(raw)

    @abstractmethod
    def _project(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _support(self, g: np.ndarray) -> np.ndarray: ...


class Box(ConvexSet):
    kind = "box"

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise InputError(f"box bounds must be vectors of equal length, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InputError("box bounds must be finite")
        if np.any(lo > hi):
            raise EmptySetError(f"box is empty: lo > hi at coordinates {np.flatnonzero(lo > hi).tolist()}")
        super().__init__(lo.shape[0])
        self.lo = _frozen(lo)
        self.hi = _frozen(hi)

    @property
    def is_bounded(self) -> bool:
        return True

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    def _project(self, x):
        return np.clip(x, self.lo, self.hi)

    def _support(self, g):
        return np.where(g >= 0, self.hi, self.lo)

    def project_many(self, X):
        return np.clip(as_batch(X, self.dim), self.lo, self.hi)

    def contains_many(self, X, tol: float = MEMBERSHIP_TOL):
        X = as_batch(X, self.dim)
        return np.linalg.norm(X - np.clip(X, self.lo, self.hi), axis=1) <= tol

    def support_many(self, G):
        G = as_batch(G, self.dim)
        return np.where(G >= 0, self.hi, self.lo)

    def sample(self, rng, n):
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


class Ball(ConvexSet):
    kind = "ball"

    def __init__(self, center, radius: float):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if center.ndim != 1 or not np.all(np.isfinite(center)):
            raise InputError("ball center must be a finite vector")
        if not np.isfinite(radius) or radius <= 0:
            raise EmptySetError(f"ball radius must be positive, got {radius}")
        super().__init__(center.shape[0])
        self.center = _frozen(center)
        self.radius = float(radius)

    @property
    def is_bounded(self) -> bool:
        return True

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    def _project(self, x):
        d = x - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return x.copy()
        return self.center + (self.radius / n) * d

    def _support(self, g):
        n = np.linalg.norm(g)
        if n == 0:
            return self.center.copy()
        return self.center + (self.radius / n) * g

    def project_many(self, X):
        X = as_batch(X, self.dim)
        D = X - self.center
        n = np.linalg.norm(D, axis=1)
        scale = np.where(n > self.radius, self.radius / np.where(n > 0, n, 1.0), 1.0)
        return self.center + D * scale[:, None]

    def contains_many(self, X, tol: float = MEMBERSHIP_TOL):
        X = as_batch(X, self.dim)
        return np.linalg.norm(X - self.center, axis=1) <= self.radius + tol

    def support_many(self, G):
        G = as_batch(G, self.dim)
        n = np.linalg.norm(G, axis=1)
        safe = np.where(n > 0, n, 1.0)
        return self.center + (self.radius / safe)[:, None] * G * (n > 0)[:, None]

    def sample(self, rng, n):
        direction = rng.standard_normal((n, self.dim))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        radii = self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.center + direction * radii[:, None]

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


class Polytope(ConvexSet):
    """{x : A x <= b}; feasibility is established when the object is built."""
    kind = "polytope"

    MAX_NNLS_ITER = 10_000
    VERTEX_DIM_LIMIT = 4

    def __init__(self, A, b):
        A = np.array(A, dtype=float)
        if A.ndim == 1:
            A = A.reshape(1, -1)
        b = np.atleast_1d(np.asarray(b, dtype=float))
        if A.ndim != 2 or b.ndim != 1 or A.shape[0] != b.shape[0] or A.shape[1] == 0:
            raise InputError(f"polytope data must be A (m×n) and b (m), got {A.shape} and {b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputError("polytope data must be finite")
        super().__init__(A.shape[1])
        self.A = _frozen(A)
        self.b = _frozen(b)
        self.feasible_point = self._phase_one()

    def _phase_one(self) -> np.ndarray:
        res = linprog(
            np.zeros(self.dim), A_ub=self.A, b_ub=self.b,
            bounds=[(None, None)] * self.dim, method="highs",
        )
        if res.status == 2:
            raise EmptySetError("polytope is empty: phase-one linear program is infeasible")
        if res.status != 0 or res.x is None:
            raise NumericalError("phase-one feasibility solve failed", {"status": res.status, "message": res.message})
        return _frozen(res.x)

    @cached_property
    def _extent(self) -> Tuple[np.ndarray, np.ndarray, bool]:
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        for i in range(self.dim):
            for sign in (1.0, -1.0):
                c = np.zeros(self.dim)
                c[i] = -sign
                res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.dim, method="highs")
                if res.status == 0:
                    if sign > 0:
                        hi[i] = res.x[i]
                    else:
                        lo[i] = res.x[i]
        bounded = bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))
        return lo, hi, bounded

    @property
    def is_bounded(self) -> bool:
        return self._extent[2]

    def bounding_box(self):
        lo, hi, _ = self._extent
        return lo.copy(), hi.copy()

    @cached_property
    def vertices(self) -> Optional[np.ndarray]:
        """Vertex list for bounded polytopes of small dimension, else None."""
        if not self.is_bounded or self.dim > self.VERTEX_DIM_LIMIT:
            return None
        found = []
        m = self.A.shape[0]
        for rows in combinations(range(m), self.dim):
            sub = self.A[list(rows)]
            if abs(np.linalg.det(sub)) < 1e-12:
                continue
            v = np.linalg.solve(sub, self.b[list(rows)])
            if np.all(self.A @ v <= self.b + 1e-9) and not any(np.allclose(v, u, atol=1e-10) for u in found):
                found.append(v)
        if not found:
            return None
        return _frozen(np.array(found))

    def _project(self, x):
        # least-distance problem min ||z|| s.t. -A z >= A x - b, solved through NNLS (Lawson-Hanson)
        h = self.A @ x - self.b
        if np.max(h) <= 1e-12:
            return x.copy()
        E = np.vstack([-self.A.T, h[None, :]])
        f = np.zeros(self.dim + 1)
        f[-1] = 1.0
        try:
            u, _ = nnls(E, f, maxiter=self.MAX_NNLS_ITER)
        except RuntimeError as e:
            raise NumericalError(
                "polytope projection did not converge",
                {"iteration_cap": self.MAX_NNLS_ITER, "reason": str(e), "point": x.tolist()},
            ) from e
        r = E @ u - f
        if abs(r[-1]) < 1e-15:
            raise NumericalError("polytope projection hit a degenerate least-distance system", {"residual": r.tolist()})
        y = x - r[:-1] / r[-1]
        violation = float(np.max(self.A @ y - self.b))
        if violation > 1e-9 * (1.0 + np.max(np.abs(self.b))):
            raise NumericalError(
                "polytope projection is infeasible beyond tolerance",
                {"violation": violation, "iteration_cap": self.MAX_NNLS_ITER},
            )
        return y

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> bool:
        x = as_vector(x, self.dim)
        if np.max(self.A @ x - self.b) <= 0:
            return True
        return super().contains(x, tol)

    def _support(self, g):
        verts = self.vertices
        if verts is not None:
            return verts[int(np.argmax(verts @ g))].copy()
        res = linprog(-g, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * self.dim, method="highs")
        if res.status == 3:
            raise UnboundedSupportError(f"<g, .> is unbounded above on the polytope for g = {g.tolist()}")
        if res.status != 0:
            raise NumericalError("support linear program failed", {"status": res.status, "message": res.message})
        return res.x

    def support_many(self, G):
        G = as_batch(G, self.dim)
        verts = self.vertices
        if verts is not None:
            return verts[np.argmax(G @ verts.T, axis=1)]
        return super().support_many(G)

    def __repr__(self):
        return f"Polytope(A={self.A.tolist()}, b={self.b.tolist()})"


class WholeSpace(ConvexSet):
    kind = "whole"

    @property
    def is_bounded(self) -> bool:
        return False

    def bounding_box(self):
        return np.full(self.dim, -np.inf), np.full(self.dim, np.inf)

    def _project(self, x):
        return x.copy()

    def _support(self, g):
        raise UnboundedSupportError("the whole space has no support point")

    def project_many(self, X):
        return np.array(as_batch(X, self.dim), copy=True)

    def contains_many(self, X, tol: float = MEMBERSHIP_TOL):
        return np.ones(as_batch(X, self.dim).shape[0], dtype=bool)

    def sample(self, rng, n):
        return 10.0 * rng.standard_normal((n, self.dim))

    def __repr__(self):
        return f"WholeSpace({self.dim})"


def project_intersection(sets: Sequence[ConvexSet], x, max_iter: int = 10_000, tol: float = 1e-12) -> np.ndarray:
    """Dykstra's alternating projection onto the intersection of several sets."""
    if len(sets) == 1:
        return sets[0].project(x)
    y = np.asarray(x, dtype=float).copy()
    corrections = [np.zeros_like(y) for _ in sets]
    for it in range(max_iter):
        prev = y.copy()
        for i, S in enumerate(sets):
            z = S.project(y + corrections[i])
            corrections[i] = y + corrections[i] - z
            y = z
        if np.linalg.norm(y - prev) <= tol * (1.0 + np.linalg.norm(y)):
            return y
    raise NumericalError("alternating projection onto an intersection did not converge",
                         {"iterations": max_iter, "last_step": float(np.linalg.norm(y - prev))})


def project(S: ConvexSet, x) -> np.ndarray:
    return S.project(x)


def contains(S: ConvexSet, x, tol: float = 0.0) -> bool:
    if tol < 0:
        raise InputError(f"membership tolerance must be nonnegative, got {tol}")
    return S.contains(x, tol)


def support_point(S: ConvexSet, g) -> np.ndarray:
    return S.support_point(g)
