from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.errors import InputError, NonConvergenceError
from app.services.gap import gap_report
from app.services.instances import random_instance
from app.services.outer_solver import (
    OuterParams, continue_from, gamma_map, solve_coupled, with_overrides, within_radius,
)


@pytest.mark.parametrize("name", [
    "coupled_box_1d",
    "coupled_box_1d_origin",
    "decoupled_box_1d",
    "hemi_kink_1d",
    "param_kink_1d",
    "l1_coupled_1d",
    "equation_constrained_1d",
    "coupled_vi_2d",
])
def test_solves_to_the_reference(suite, name):
    prob = suite(name)
    u, w, trace = solve_coupled(prob)
    assert trace.status == "certified"
    assert_allclose(u, prob.reference["u"], atol=1e-6)
    assert_allclose(w, prob.reference["w"], atol=1e-6)
    last = trace.records[-1]
    assert max(last.gap1, last.gap2) <= OuterParams().joint_tol


def test_thread_pool_does_not_change_the_result(suite):
    prob = suite("coupled_box_1d")
    u1, w1, t1 = solve_coupled(prob)
    with ThreadPoolExecutor(max_workers=2) as pool:
        u2, w2, t2 = solve_coupled(prob, executor=pool)
    assert np.array_equal(u1, u2)
    assert np.array_equal(w1, w2)
    assert t1.iterations == t2.iterations


def test_iteration_cap_then_continue(suite):
    prob = suite("coupled_box_1d")
    params = OuterParams(max_outer=1, retry_on_failure=False)
    with pytest.raises(NonConvergenceError) as exc:
        solve_coupled(prob, u0=[-1.0], w0=[1.0], params=params)
    trace = exc.value.trace
    assert trace.status == "nonconvergent"
    assert trace.iterations == 1
    u_best, w_best = exc.value.best
    assert u_best.shape == (1,) and w_best.shape == (1,)

    u, w, trace = continue_from(trace, 500)
    assert trace.status == "certified"
    assert_allclose(u, [1.0], atol=1e-6)
    assert_allclose(w, [-0.5], atol=1e-6)


def test_retry_halves_the_damping(suite):
    prob = suite("coupled_box_1d")
    with pytest.raises(NonConvergenceError) as exc:
        solve_coupled(prob, u0=[-1.0], w0=[1.0], params=OuterParams(max_outer=1, damping=0.5))
    trace = exc.value.trace
    assert trace.retries == 1
    assert trace.damping == 0.25
    assert trace.iterations == 2


def test_gamma_map_returns_certified_images(suite):
    prob = suite("coupled_box_1d")
    res1, res2 = gamma_map(prob, [0.0], [0.0])
    assert_allclose(res1.solution, [1.0], atol=1e-9)
    assert_allclose(res2.solution, [0.0], atol=1e-9)


def test_start_point_is_projected(suite):
    prob = suite("coupled_box_1d")
    u, w, trace = solve_coupled(prob, u0=[5.0], w0=[-5.0])
    assert trace.status == "certified"
    assert_allclose(u, [1.0], atol=1e-6)


def test_parameters_are_validated():
    with pytest.raises(InputError):
        OuterParams(damping=0.0)
    with pytest.raises(InputError):
        OuterParams(joint_tol=0.0)
    params = with_overrides(OuterParams(), damping=0.25, max_outer=None)
    assert params.damping == 0.25
    assert params.max_outer == OuterParams().max_outer


def test_coupled_equations_match_a_dense_solve(suite):
    prob = suite("linear_equations_2d")
    u, w, trace = solve_coupled(prob, params=OuterParams(joint_tol=1e-11))
    assert trace.status == "certified"
    M = np.block([[prob.A.P, prob.A.K], [prob.B.K, prob.B.P]])
    x = np.linalg.solve(M, np.concatenate([prob.h, prob.l]))
    assert_allclose(np.concatenate([u, w]), x, atol=1e-9)


def test_random_instance_with_a_kinked_inner_problem_certifies():
    prob = random_instance(dims=(1, 1), seed=4)
    u, w, trace = solve_coupled(prob)
    assert trace.status == "certified"
    report = gap_report(prob, u, w, minty=False)
    assert report.joint <= OuterParams().joint_tol


def test_invariance_radius_is_euclidean():
    assert within_radius(np.array([0.7, 0.0]), np.array([0.7]), 1.0)
    # inside the unit cube but outside the unit ball
    assert not within_radius(np.array([0.8, 0.8]), np.array([0.0]), 1.0)


def test_invariance_box_is_tracked(suite):
    prob = suite("coupled_box_1d")
    _, _, trace = solve_coupled(prob, u0=[0.0], w0=[0.0], params=OuterParams(invariance_radius=2.2))
    assert all(r.inside_invariance_box for r in trace.records)
    assert not trace.diagnostics

    # the first image (1, 0) leaves the ball of radius 0.5
    _, _, trace = solve_coupled(prob, u0=[0.0], w0=[0.0], params=OuterParams(invariance_radius=0.5))
    assert trace.records[0].inside_invariance_box is False
    assert "invariance box" in trace.diagnostics[0]


def test_split_run_reproduces_a_single_run(suite):
    prob = suite("coupled_box_1d")
    params = OuterParams(damping=0.02, max_outer=100, retry_on_failure=False)
    with pytest.raises(NonConvergenceError) as exc:
        solve_coupled(prob, u0=[-1.0], w0=[1.0], params=params)
    whole = exc.value.trace

    with pytest.raises(NonConvergenceError) as exc:
        solve_coupled(prob, u0=[-1.0], w0=[1.0], params=with_overrides(params, max_outer=50))
    split = exc.value.trace
    assert split.iterations == 50
    with pytest.raises(NonConvergenceError):
        continue_from(split, 50)

    assert split.iterations == whole.iterations == 100
    assert np.array_equal(split.u, whole.u)
    assert np.array_equal(split.w, whole.w)
    assert [(r.u, r.w, r.gap1, r.gap2) for r in split.records] == [(r.u, r.w, r.gap1, r.gap2) for r in whole.records]
