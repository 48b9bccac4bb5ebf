import pytest
from numpy.testing import assert_allclose

from app.errors import InputError, NonConvergenceError
from app.services.inner_solver import InnerParams, solve_inner_1, solve_inner_2, solve_side


def test_first_inequality_with_frozen_second_unknown(suite):
    prob = suite("coupled_box_1d")
    res = solve_inner_1(prob, [-0.5], [0.0])
    assert_allclose(res.solution, [1.0], atol=1e-9)
    assert res.final_gap <= InnerParams().gap_tol


def test_second_inequality_with_frozen_first_unknown(suite):
    prob = suite("coupled_box_1d")
    res = solve_inner_2(prob, [1.0], [0.3])
    assert_allclose(res.solution, [-0.5], atol=1e-9)


def test_iterate_lands_on_the_kink(suite):
    prob = suite("hemi_kink_1d")
    res = solve_inner_1(prob, [0.0], [0.7])
    assert_allclose(res.solution, [0.0], atol=1e-12)
    assert res.final_gap <= 1e-12


def test_l1_potential(suite):
    prob = suite("l1_coupled_1d")
    res = solve_inner_1(prob, [-0.5], [4.0])
    assert_allclose(res.solution, [1.0], atol=1e-9)


def test_iteration_cap_raises_with_best_iterate(suite):
    prob = suite("coupled_box_1d")
    with pytest.raises(NonConvergenceError) as exc:
        solve_side(prob.side(1), [-0.5], [-1.0], InnerParams(max_iter=1))
    assert exc.value.best.shape == (1,)
    assert exc.value.best_gap < float("inf")


def test_parameters_are_validated():
    with pytest.raises(InputError):
        InnerParams(lam=0.0)
    with pytest.raises(InputError):
        InnerParams(max_iter=0)
