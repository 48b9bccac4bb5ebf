import logging

import pytest

from app.errors import BoundUnavailableError, InputError, UnsupportedEstimateError
from app.services import hypotheses
from app.services.hypotheses import (
    FALLBACK_SEARCH_RADIUS, audit, default_search_radius, falsify_pseudomonotone, solution_bound,
)
from app.services.instances import random_instance


def test_well_posed_problem_passes_with_bounds(suite):
    prob = suite("coupled_box_1d")
    report = audit(prob, samples=50)
    assert report.statuses["H(A)"] == "pass"
    assert report.statuses["H(B)"] == "pass"
    assert report.passed and not report.falsified
    assert report.first.pseudomonotone.status == "pass-by-construction"
    assert report.first.growth.provenance == "computed"
    assert report.bound_radius == pytest.approx(2.2)
    assert report.invariance_radius == pytest.approx(2.2)
    assert set(report.derivations) == {"first", "second"}


def test_pseudomonotonicity_witness(suite):
    prob = suite("patho_nonpseudomonotone_1d")
    verdict = falsify_pseudomonotone(prob, "first", samples=100)
    assert verdict.status == "falsified"
    assert verdict.witness["u"] == [0.0]
    assert verdict.witness["v"] == [1.0]
    assert verdict.witness["conclusion"] < 0

    report = audit(prob, samples=50)
    assert report.statuses["H(A)"] == "fail"
    assert report.falsified


def test_coercivity_witness_along_the_flat_direction(suite):
    prob = suite("patho_noncoercive_2d")
    report = audit(prob, samples=50)
    assert report.first.coercivity == "falsified"
    assert report.first.coercivity_witness["x"] == [0.0, 1.0]
    assert report.statuses["H(A)"] == "fail"
    assert report.bound_radius is None
    assert report.bound_reason


def test_profile_that_does_not_grow_is_flagged(suite):
    prob = suite("patho_coupling_dominated_1d")
    report = audit(prob, samples=50)
    assert report.first.profile_flag["regime"] == "proportional"
    assert report.statuses["H(A)"] == "fail"
    assert report.bound_radius is None
    assert "no finite a-priori bound" in report.bound_reason
    with pytest.raises(BoundUnavailableError):
        solution_bound(prob, report)


def test_random_instances_satisfy_their_declared_profiles():
    report = audit(random_instance(dims=(2, 1), seed=3), samples=50)
    assert report.passed
    assert report.bound_radius is not None


def test_audit_is_deterministic(suite):
    prob = suite("param_kink_1d")
    assert audit(prob, samples=30, seed=5).to_dict() == audit(prob, samples=30, seed=5).to_dict()


def test_falsifier_rejects_unknown_side(suite):
    with pytest.raises(InputError):
        falsify_pseudomonotone(suite("coupled_box_1d"), "third")


def test_search_radius_falls_back_when_the_audit_cannot_estimate(suite, monkeypatch, caplog):
    def failing_audit(*args, **kwargs):
        raise UnsupportedEstimateError("operator has no linear growth")

    monkeypatch.setattr(hypotheses, "audit", failing_audit)
    default_search_radius.cache_clear()
    with caplog.at_level(logging.WARNING, logger="app.services.hypotheses"):
        assert default_search_radius(suite("linear_equations_2d")) == FALLBACK_SEARCH_RADIUS
    assert "no linear growth" in caplog.text
    default_search_radius.cache_clear()


def test_search_radius_does_not_hide_programming_errors(suite, monkeypatch):
    def broken_audit(*args, **kwargs):
        raise TypeError("bad call")

    monkeypatch.setattr(hypotheses, "audit", broken_audit)
    default_search_radius.cache_clear()
    with pytest.raises(TypeError):
        default_search_radius(suite("linear_equations_2d"))
    default_search_radius.cache_clear()
