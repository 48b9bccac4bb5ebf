import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.errors import InputError, PreconditionError, UnsupportedEstimateError
from app.services.functions import MaxSmoothBifunction, SmoothPiece
from app.services.operators import (
    AffineOperator, CompositeOperator, LinearProfile, MonotoneGradientOperator, PowerPotential,
    QuadraticPotential, TableProfile, coercivity_certificate, coercivity_value, hemicontinuity_probe,
)
from app.services.spaces import LinearMap


def test_affine_operator_eval():
    T = AffineOperator([[1.0]], [[0.5]])
    assert_allclose(T.eval([2.0], [1.0]), [2.0])
    assert T.reads_parameter
    assert not AffineOperator([[1.0]], param_dim=1).reads_parameter


def test_affine_operator_needs_coupling_dimension():
    with pytest.raises(InputError):
        AffineOperator([[1.0]])


def test_monotonicity_of_affine_operators():
    assert AffineOperator([[1.0, 2.0], [-2.0, 1.0]], param_dim=1).is_monotone
    assert not AffineOperator([[-1.0]], param_dim=1).is_monotone


def test_power_potential_gradient_and_growth():
    T = MonotoneGradientOperator(PowerPotential(1.0, 3.0, 2), param_dim=1)
    assert_allclose(T.eval([0.0], [3.0, 4.0]), [15.0, 20.0])
    with pytest.raises(UnsupportedEstimateError):
        T.growth_constant
    assert PowerPotential(2.0, 1.5, 1).growth == 2.0


def test_quadratic_potential_must_be_psd():
    with pytest.raises(InputError):
        QuadraticPotential([[1.0, 0.0], [0.0, -1.0]])


def test_composite_operator_sums_parts():
    T = CompositeOperator([
        AffineOperator([[1.0]], [[1.0]]),
        MonotoneGradientOperator(QuadraticPotential([[2.0]]), param_dim=1),
    ])
    assert_allclose(T.eval([1.0], [1.0]), [4.0])
    assert T.is_monotone
    with pytest.raises(InputError):
        CompositeOperator([AffineOperator([[1.0]], [[1.0]]), AffineOperator(np.eye(2), np.ones((2, 1)))])


def test_profiles():
    r = LinearProfile(2.0, 0.5, 1.0)
    assert r.value(3.0, 2.0) == pytest.approx(4.0)
    with pytest.raises(InputError):
        LinearProfile(0.0)
    table = TableProfile(((1.0, 0.0, 0.5), (10.0, 0.0, 9.0)))
    assert table.value(8.0, 0.0) == 9.0


def test_coercivity_value_and_certificate_agree_off_kinks():
    T = AffineOperator([[1.0]], param_dim=1)
    J = MaxSmoothBifunction([SmoothPiece.affine([0.0], [1.0]), SmoothPiece.affine([0.0], [-1.0])], 1, 1)
    I = LinearMap.identity(1)
    # (|x|^2 - J0(x; -x)) / |x| = (4 + 2) / 2
    assert coercivity_value(T, J, I, I, [0.0], [2.0]) == pytest.approx(3.0)
    assert coercivity_certificate(T, J, I, I, [0.0], [2.0]) == pytest.approx(3.0)
    with pytest.raises(PreconditionError):
        coercivity_value(T, J, I, I, [0.0], [0.0])


def test_hemicontinuity_probe_passes_for_affine():
    T = AffineOperator([[2.0, 1.0], [0.0, 1.0]], param_dim=1)
    probe = hemicontinuity_probe(T, [0.0], [1.0, 0.0], [0.0, 1.0])
    assert probe.passed
    assert probe.spread < 1e-6
