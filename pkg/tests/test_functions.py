import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.errors import InfeasibleAnchorError, InputError
from app.services.functions import (
    ConvexExtendedFunction, Indicator, MaxSmoothBifunction, NormL2, QuadraticTerm, SmoothPiece,
    WeightedL1,
)
from app.services.spaces import Ball, Box


def abs_value():
    return MaxSmoothBifunction([SmoothPiece.affine([0.0], [1.0]), SmoothPiece.affine([0.0], [-1.0])], 1, 1)


def test_l1_prox_is_soft_threshold():
    f = ConvexExtendedFunction(2, [WeightedL1(1.0, 2)])
    assert_allclose(f.prox([3.0, -0.5], 1.0), [2.0, 0.0])


def test_separable_prox_clips_after_shrinking():
    f = ConvexExtendedFunction(1, [WeightedL1(1.0, 1), Indicator(Box([-1.0], [1.0]))])
    assert_allclose(f.prox([3.0], 1.0), [1.0])
    assert_allclose(f.prox([0.5], 1.0), [0.0])


def test_quadratic_prox():
    f = ConvexExtendedFunction(1, [QuadraticTerm([[2.0]])])
    assert_allclose(f.prox([3.0], 1.0), [1.0])


def test_splitting_prox_for_non_separable_sum():
    # argmin |v| + indicator(ball around (2, 0)) + |v - (3, 0)|^2 / 2 is (2, 0)
    f = ConvexExtendedFunction(2, [NormL2(1.0, 2), Indicator(Ball([2.0, 0.0], 1.0))])
    assert_allclose(f.prox([3.0, 0.0], 1.0), [2.0, 0.0], atol=1e-6)


def test_indicator_value_outside_domain_is_infinite():
    f = ConvexExtendedFunction(1, [Indicator(Box([0.0], [1.0]))])
    assert f.value([0.5]) == 0.0
    assert f.value([2.0]) == np.inf


def test_minorant_constants():
    f = ConvexExtendedFunction(2, [QuadraticTerm(np.eye(2), [3.0, 4.0], -2.0)])
    assert f.minorant_constants() == (pytest.approx(5.0), pytest.approx(2.0))


def test_find_anchor():
    f = ConvexExtendedFunction(1, [WeightedL1(1.0, 1)])
    assert_allclose(f.find_anchor(Box([1.0], [2.0])), [1.0])
    g = ConvexExtendedFunction(1, [Indicator(Box([5.0], [6.0]))])
    with pytest.raises(InfeasibleAnchorError):
        g.find_anchor(Box([0.0], [1.0]))


def test_invalid_terms_are_rejected():
    with pytest.raises(InputError):
        WeightedL1(-1.0, 1)
    with pytest.raises(InputError):
        QuadraticTerm([[-1.0]])
    with pytest.raises(InputError):
        QuadraticTerm([[1.0, 2.0], [0.0, 1.0]])


def test_clarke_directional_derivative_of_abs():
    J = abs_value()
    assert J.value([0.0], [2.0]) == 2.0
    assert J.clarke_dir([0.0], [0.0], [1.0]) == 1.0
    assert J.clarke_dir([0.0], [0.0], [-1.0]) == 1.0
    assert J.clarke_dir([0.0], [1.0], [-1.0]) == -1.0
    sub = J.clarke_subdiff([0.0], [0.0])
    assert sorted(sub.vertices.ravel().tolist()) == [-1.0, 1.0]
    assert sub.max_norm == 1.0


def test_batched_clarke_derivative_matches_pointwise():
    J = abs_value()
    P = np.zeros((3, 1))
    X = np.array([[0.0], [1.0], [-2.0]])
    D = np.array([[-1.0], [-1.0], [1.0]])
    expected = [J.clarke_dir(p, x, d) for p, x, d in zip(P, X, D)]
    assert_allclose(J.clarke_dir_many(P, X, D), expected)


def test_parameter_dependence_and_growth():
    J = abs_value()
    assert J.is_parameter_free
    assert J.growth_constant == 1.0
    K = MaxSmoothBifunction([SmoothPiece.affine([1.0], [1.0]), SmoothPiece.affine([0.0], [-1.0])], 1, 1)
    assert not K.is_parameter_free
    assert MaxSmoothBifunction.zero(2, 3).is_zero


def test_piece_dimension_mismatch():
    with pytest.raises(InputError) as exc:
        MaxSmoothBifunction([SmoothPiece.affine([0.0, 0.0], [1.0])], 1, 1)
    assert exc.value.path == "pieces[0]"


def test_quadratic_piece_needs_symmetric_matrix():
    with pytest.raises(InputError):
        SmoothPiece.quadratic([[1.0, 1.0], [0.0, 1.0]], [0.0], [0.0, 0.0])


def random_max_smooth(rng, pieces, param_dim, arg_dim, kink_at=None, curvature=1.0):
    out = []
    for i in range(pieces):
        g_p, g_x = rng.standard_normal(param_dim), rng.standard_normal(arg_dim)
        if i % 3 == 2:
            S = curvature * rng.standard_normal((arg_dim, arg_dim))
            out.append(SmoothPiece.quadratic(0.5 * (S + S.T), g_p, g_x, float(rng.standard_normal()),
                                             M=curvature * rng.standard_normal((arg_dim, param_dim))))
        else:
            out.append(SmoothPiece.affine(g_p, g_x, float(rng.standard_normal())))
    if kink_at is not None:
        # lift the first two affine pieces so both are active at (p, x)
        P, X = kink_at[0][None, :], kink_at[1][None, :]
        top = max(float(piece.values_many(P, X)[0]) for piece in out)
        out[:2] = [
            SmoothPiece.affine(piece.g_p, piece.g_x, piece.b + top - float(piece.values_many(P, X)[0]))
            for piece in out[:2]
        ]
    return MaxSmoothBifunction(out, param_dim, arg_dim)


def random_cases(seed, count):
    rng = np.random.default_rng(seed)
    for i in range(count):
        m, n = int(rng.integers(1, 4)), int(rng.integers(1, 6))
        p, x = rng.standard_normal(m), rng.standard_normal(n)
        J = random_max_smooth(rng, int(rng.integers(2, 7)), m, n, kink_at=(p, x) if i % 2 else None)
        yield rng, J, p, x


def test_clarke_derivative_is_a_support_function():
    for rng, J, p, x in random_cases(0, 1000):
        d1, d2 = rng.standard_normal((2, x.shape[0]))
        base = J.clarke_dir(p, x, d1)
        for t in (0.5, 2.0, 10.0):
            assert J.clarke_dir(p, x, t * d1) == pytest.approx(t * base, rel=1e-12, abs=1e-12)
        assert J.clarke_dir(p, x, 0.0 * d1) == 0.0
        assert J.clarke_dir(p, x, d1 + d2) <= base + J.clarke_dir(p, x, d2) + 1e-12
        assert J.clarke_subdiff(p, x).support(d1) == pytest.approx(base, abs=1e-12)


def test_kinked_points_have_several_subgradients():
    multiple = 0
    for _, J, p, x in random_cases(1, 200):
        multiple += J.clarke_subdiff(p, x).vertices.shape[0] >= 2
    assert multiple >= 100


def test_subgradients_respect_the_growth_constant():
    for _, J, p, x in random_cases(2, 1000):
        bound = J.growth_constant * (1.0 + np.linalg.norm(x) + np.linalg.norm(p))
        assert J.clarke_subdiff(p, x).max_norm <= bound + 1e-12


def test_clarke_derivative_matches_difference_quotients():
    rng = np.random.default_rng(3)
    checked = 0
    for _ in range(200):
        J = random_max_smooth(rng, 4, 2, 3, curvature=0.1)
        p, x, d = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(3)
        X = x + 1e-4 * rng.standard_normal((50, 3))
        if any(J.clarke_subdiff(p, y).vertices.shape[0] > 1 for y in X):
            continue
        quotients = [(J.value(p, y + 1e-5 * d) - J.value(p, y)) / 1e-5 for y in X]
        assert max(quotients) == pytest.approx(J.clarke_dir(p, x, d), abs=1e-3)
        checked += 1
    assert checked >= 100


def test_prox_is_optimal_along_random_directions():
    rng = np.random.default_rng(4)
    f = ConvexExtendedFunction(3, [
        WeightedL1(0.7, 3), QuadraticTerm(np.diag([1.0, 0.0, 2.0]), [0.5, -1.0, 0.0]),
        Indicator(Box([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0])),
    ])
    lam = 0.8
    for x in 2.0 * rng.standard_normal((10, 3)):
        v = f.prox(x, lam)

        def objective(y):
            return f.value(y) + (y - x) @ (y - x) / (2 * lam)

        fv = objective(v)
        assert np.isfinite(fv)
        for d in rng.standard_normal((100, 3)):
            y = np.clip(v + 1e-3 * d, -1.0, 1.0)
            assert objective(y) - fv >= -1e-8
