import numpy as np
from numpy.testing import assert_allclose
from scipy.optimize import minimize_scalar

from app.services.functions import ConvexExtendedFunction
from app.services.kernels import project_simplex, prox_max_affine
from app.services.spaces import Box


def test_project_simplex():
    mu = project_simplex(np.array([0.5, 2.0, -1.0]))
    assert_allclose(mu, [0.0, 1.0, 0.0])
    mu = project_simplex(np.array([0.3, 0.3, 0.3]))
    assert_allclose(mu.sum(), 1.0)
    assert_allclose(mu, [1 / 3, 1 / 3, 1 / 3])


def test_prox_of_abs_value_stops_at_the_kink():
    phi = ConvexExtendedFunction.zero(1)
    slopes = np.array([[1.0], [-1.0]])
    zero = np.zeros(1)
    res = prox_max_affine(zero, slopes, np.zeros(2), zero, np.array([0.5]), 1.0, phi)
    assert_allclose(res.v, [0.0], atol=1e-12)
    res = prox_max_affine(zero, slopes, np.zeros(2), zero, np.array([3.0]), 1.0, phi)
    assert_allclose(res.v, [2.0], atol=1e-12)


def test_prox_with_many_pieces_matches_single_active_piece():
    phi = ConvexExtendedFunction.zero(1)
    # far right only the steepest piece matters: v = center - lam * 3
    slopes = np.array([[3.0], [1.0], [-1.0]])
    offsets = np.array([0.0, -50.0, -50.0])
    res = prox_max_affine(np.zeros(1), slopes, offsets, np.array([10.0]), np.array([10.0]), 1.0, phi)
    assert_allclose(res.v, [7.0], atol=1e-6)


def kernel_objective(g, slopes, offsets, anchor, center, lam, phi):
    def f(v):
        v = np.atleast_1d(v)
        return float(g @ v + np.max(offsets + slopes @ (v - anchor)) + phi.value(v) + (v - center) @ (v - center) / (2 * lam))
    return f


def test_prox_lands_on_the_kink_of_two_outer_pieces():
    # max(v, -1, -0.1 - v) + v^2 / 2 is smallest where the first and last pieces meet
    phi = ConvexExtendedFunction.zero(1)
    slopes = np.array([[1.0], [0.0], [-1.0]])
    offsets = np.array([0.0, -1.0, -0.1])
    zero = np.zeros(1)
    res = prox_max_affine(zero, slopes, offsets, zero, zero, 1.0, phi)
    assert_allclose(res.v, [-0.05], atol=1e-12)
    assert_allclose(res.weights, [0.525, 0.0, 0.475], atol=1e-12)


def test_prox_matches_a_scalar_minimiser_on_random_models():
    rng = np.random.default_rng(0)
    phi = ConvexExtendedFunction.zero(1)
    for _ in range(25):
        k = int(rng.integers(3, 7))
        slopes = rng.standard_normal((k, 1))
        offsets = rng.uniform(-0.5, 0.5, k)
        g = rng.standard_normal(1)
        anchor, center = rng.uniform(-1.0, 1.0, 1), rng.uniform(-1.0, 1.0, 1)
        lam = float(rng.uniform(0.1, 2.0))
        f = kernel_objective(g, slopes, offsets, anchor, center, lam, phi)
        ref = minimize_scalar(f, bounds=(center[0] - 50.0, center[0] + 50.0), method="bounded",
                              options={"xatol": 1e-12})
        res = prox_max_affine(g, slopes, offsets, anchor, center, lam, phi)
        assert f(res.v) <= ref.fun + 1e-10
        assert_allclose(res.v, [ref.x], atol=1e-5)


def test_prox_is_optimal_along_random_directions():
    rng = np.random.default_rng(1)
    phi = ConvexExtendedFunction.zero(2).with_constraint(Box([-1.0, -1.0], [1.0, 1.0]))
    for _ in range(10):
        slopes = rng.standard_normal((4, 2))
        offsets = rng.uniform(-0.5, 0.5, 4)
        g, anchor, center = rng.standard_normal(2), rng.uniform(-1.0, 1.0, 2), rng.uniform(-2.0, 2.0, 2)
        f = kernel_objective(g, slopes, offsets, anchor, center, 0.7, phi)
        v = prox_max_affine(g, slopes, offsets, anchor, center, 0.7, phi).v
        assert np.all(np.abs(v) <= 1.0 + 1e-12)
        fv = f(v)
        for d in rng.standard_normal((20, 2)):
            for eps in (1e-3, 1e-2):
                w = np.clip(v + eps * d, -1.0, 1.0)
                assert fv <= f(w) + 1e-10
