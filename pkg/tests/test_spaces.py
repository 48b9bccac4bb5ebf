import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.errors import EmptySetError, InputError, UnboundedSupportError
from app.services.spaces import (
    Ball, Box, LinearMap, Polytope, WholeSpace, contains, project_intersection,
)


def test_box_projection_and_support():
    box = Box([-1.0, 0.0], [1.0, 2.0])
    assert_allclose(box.project([3.0, -1.0]), [1.0, 0.0])
    assert_allclose(box.support_point([-1.0, 1.0]), [-1.0, 2.0])
    assert box.contains([0.5, 1.5])
    assert not box.contains([0.5, 2.5])
    assert box.diameter == pytest.approx(np.sqrt(8.0))


def test_empty_box_is_rejected():
    with pytest.raises(EmptySetError):
        Box([1.0], [0.0])


def test_ball_projection_matches_batch():
    ball = Ball([0.0, 0.0], 1.0)
    assert_allclose(ball.project([3.0, 4.0]), [0.6, 0.8])
    X = np.array([[3.0, 4.0], [0.1, 0.2], [0.0, -2.0]])
    assert_allclose(ball.project_many(X), np.array([ball.project(x) for x in X]))


def test_polytope_projection():
    # x1 + x2 <= 1, x >= 0
    P = Polytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0, 0.0])
    assert_allclose(P.project([1.0, 1.0]), [0.5, 0.5], atol=1e-9)
    assert_allclose(P.project([-1.0, 0.3]), [0.0, 0.3], atol=1e-9)
    assert_allclose(P.project([0.2, 0.2]), [0.2, 0.2])
    assert P.is_bounded
    assert_allclose(P.support_point([1.0, 2.0]), [0.0, 1.0])


def test_empty_polytope_is_rejected():
    with pytest.raises(EmptySetError):
        Polytope([[1.0], [-1.0]], [-1.0, -1.0])


def test_whole_space_has_no_support_point():
    with pytest.raises(UnboundedSupportError):
        WholeSpace(2).support_point([1.0, 0.0])


def test_contains_rejects_negative_tolerance():
    with pytest.raises(InputError):
        contains(Box([0.0], [1.0]), [0.5], tol=-1.0)


def test_wrong_dimension_names_the_argument():
    with pytest.raises(InputError) as exc:
        Box([0.0], [1.0]).project([0.0, 0.0])
    assert exc.value.path == "x"


def test_projection_onto_intersection():
    sets = [Box([0.0, 0.0], [2.0, 2.0]), Ball([0.0, 0.0], 1.0)]
    y = project_intersection(sets, [2.0, 2.0])
    assert_allclose(y, [np.sqrt(0.5), np.sqrt(0.5)], atol=1e-8)


def test_linear_map_adjoint_and_norm():
    M = LinearMap([[1.0, 2.0], [0.0, 0.0], [0.0, 1.0]])
    assert (M.rows, M.cols) == (3, 2)
    x, y = np.array([1.0, -1.0]), np.array([0.5, 2.0, -1.0])
    assert M.apply(x) @ y == pytest.approx(x @ M.adjoint(y))
    assert M.norm == pytest.approx(np.linalg.norm(M.matrix, 2))
    assert LinearMap.zeros(2, 2).is_zero


def simplex_polytope():
    return Polytope([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0, 0.0])


def test_polytope_support_along_the_first_axis():
    assert_allclose(simplex_polytope().support_point([1.0, 0.0]), [1.0, 0.0], atol=1e-9)
    assert_allclose(Box([-1.0, -1.0], [1.0, 1.0]).support_point([1.0, -1.0]), [1.0, -1.0])
    assert_allclose(Ball([0.0, 0.0], 2.0).support_point([3.0, 4.0]), [1.2, 1.6])


@pytest.fixture(params=["box", "ball", "polytope"])
def bounded_set(request):
    return {
        "box": Box([-1.0, 0.0], [1.0, 2.0]),
        "ball": Ball([0.5, -0.5], 1.5),
        "polytope": simplex_polytope(),
    }[request.param]


def test_projection_is_nonexpansive(bounded_set):
    rng = np.random.default_rng(0)
    X = 4.0 * rng.standard_normal((100, 2))
    Y = 4.0 * rng.standard_normal((100, 2))
    for x, y in zip(X, Y):
        px, py = bounded_set.project(x), bounded_set.project(y)
        assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9
        assert_allclose(bounded_set.project(px), px, atol=1e-10)


def test_projection_variational_inequality(bounded_set):
    rng = np.random.default_rng(1)
    S = bounded_set.sample(rng, 100)
    for x in 4.0 * rng.standard_normal((20, 2)):
        px = bounded_set.project(x)
        assert bounded_set.contains(px, 1e-9)
        assert np.max((S - px) @ (x - px)) <= 1e-8


def test_support_point_beats_every_sample(bounded_set):
    rng = np.random.default_rng(2)
    S = bounded_set.sample(rng, 10_000)
    for g in rng.standard_normal((10, 2)):
        s = bounded_set.support_point(g)
        assert bounded_set.contains(s, 1e-9)
        assert g @ s >= np.max(S @ g) - 1e-8
