from __future__ import annotations

import math

import numpy as np
import pytest

from artifact.model import (
    Coefficient,
    InitialData,
    ModelError,
    ModelFactors,
    StateBox,
    SystemModel,
    check_equilibrium,
    estimate_lipschitz,
    nested_grid,
)


def test_example_lipschitz_constants_on_box_two(example_model):
    lip = estimate_lipschitz(example_model, 2.0)
    assert lip.l_Lambda_inv == 5.0
    assert lip.l_F == pytest.approx(4.0 / 3.0, abs=1e-15)
    assert lip.l_Lambda == 0.5
    assert lip.l_gu == pytest.approx(2.0 + abs(math.cos(2.0)), abs=1e-12)
    assert lip.lambda_max == 1.0


def test_c_coefficients_at_unit_state(example_model):
    c = [float(a) for a in example_model.eval_c_coeffs(0.5, 1.0, 1.0)]
    np.testing.assert_allclose(c, [0, 0, 2 / 3, -2 / 3, 0, -1, -2 / 3, 2 / 3], atol=1e-15)


def test_unit_state_is_an_equilibrium(example_model):
    lu, lv, fu, fv = example_model.eval_coeffs(0.3, 1.0, 1.0)
    assert fu == 0 and fv == 0
    assert example_model.boundary_u(1.0) == pytest.approx(1.0, abs=1e-15)
    assert check_equilibrium(example_model) == 0.0


def test_variable_restrictions():
    with pytest.raises(ModelError):
        SystemModel.from_strings("1+t", "1", "0", "0", "v")
    with pytest.raises(ModelError):
        SystemModel.from_strings("1", "1", "0", "0", "u")


def test_nonpositive_speed_reports_location():
    model = SystemModel.from_strings("u", "1", "0", "0", "v")
    with pytest.raises(ModelError, match="u=-1"):
        model.eval_coeffs(np.zeros(3), np.array([1.0, -1.0, 2.0]), np.zeros(3))


def test_factors_scale_coefficients(example_model):
    pert = example_model.with_factors(ModelFactors(s_lambda_u=0.96, s_f_u=1.1, k_g_v=0.02, s_U=1.02))
    lu, _, fu, _ = pert.eval_coeffs(0.0, 1.0, 0.0)
    assert lu == pytest.approx(0.96)
    assert fu == pytest.approx(1.1 * 2 / 3)
    assert pert.boundary_v(1.0, 1.0) == pytest.approx(1.02 + 0.02)
    assert pert.input_for_boundary(pert.boundary_v(0.5, 0.7), 0.5) == pytest.approx(0.7)
    assert pert.nominal().factors.is_nominal


def test_callable_coefficients_use_finite_differences():
    c = Coefficient.from_callable(lambda x, u, v, t: np.sin(u) * v)
    d = c.derivative("u")
    assert float(d(0.0, 0.3, 2.0, 0.0)) == pytest.approx(2 * math.cos(0.3), rel=1e-8)
    assert not c.is_symbolic


def test_nested_grid_is_nested():
    a = nested_grid(-1, 1, 51)
    b = nested_grid(-1, 1, 101)
    assert np.all(np.isin(a, b))


def test_lipschitz_never_decreases_with_density(example_model):
    lo = estimate_lipschitz(example_model, 1.5, 21)
    hi = estimate_lipschitz(example_model, 1.5, 41)
    for name in ("l_Lambda", "l_F", "l_gu", "l_Lambda_inv", "lambda_max"):
        assert getattr(hi, name) >= getattr(lo, name) - 1e-15


def test_initial_data_helpers(example_model):
    w0 = InitialData.from_strings("1", "1")
    assert w0.sup_norm() == 1.0
    assert w0.lipschitz() == 0.0
    assert w0.compatibility_residual(example_model) == pytest.approx(0.0, abs=1e-15)
    u, v = InitialData.from_strings("x", "2*x").sample(4)
    np.testing.assert_allclose(v, 2 * u)


def test_state_box_coercion():
    assert StateBox.coerce(2).radius == 2
    assert StateBox.coerce([[0, 1], [-3, 2]]).radius == 3
