from __future__ import annotations

import numpy as np
import pytest

from artifact.characteristics import (
    CharCurve,
    HorizonError,
    crossing_time_estimate,
    predict,
    tau_u,
    tau_v,
    trace_xi,
)
from artifact.model import InitialData
from artifact.solver import ControlSignal, StateGrid, integrate


def test_equilibrium_crossing_time(example_model):
    grid = StateGrid(*InitialData.constant(1.0, 1.0).sample(50))
    # lambda_v = 0.5 on the equilibrium, so the v-characteristic needs 2 time units
    assert crossing_time_estimate(example_model, grid) == pytest.approx(2.0, abs=1e-12)
    tr = integrate(example_model, grid, 1.0, (0.0, 2.5), m=50)
    tau = tau_v(tr, 0.0)
    np.testing.assert_allclose(tau, 2.0 * (1 - grid.x), atol=1e-9)
    np.testing.assert_allclose(tau_u(tr, 0.0), grid.x, atol=1e-9)


def test_short_trajectory_raises_horizon_error(example_model):
    tr = integrate(example_model, InitialData.constant(1.0, 1.0), 1.0, (0.0, 1.0), m=20)
    with pytest.raises(HorizonError):
        tau_v(tr, 0.0)


def test_predict_on_equilibrium(example_model):
    grid = StateGrid(*InitialData.constant(1.0, 1.0).sample(40))
    b = predict(example_model, grid, 0.0)
    assert b.tau_k == pytest.approx(2.0, abs=1e-9)
    assert b.v0k == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(b.u_t)) <= 1e-10
    assert b.curve().is_monotone()


def test_predict_rejects_incompatible_fill_in(example_model):
    grid = StateGrid(*InitialData.constant(1.0, 1.0).sample(20))
    with pytest.raises(ValueError):
        predict(example_model, grid, 0.0, fill_in=ControlSignal.constant(0.5))


def test_predict_with_callable_fill_in_on_transport(transport_model):
    x = np.linspace(0, 1, 41)
    grid = StateGrid(np.zeros(41), np.zeros(41))
    b = predict(transport_model, grid, 0.0, fill_in=lambda t: 0.0)
    assert b.tau_k == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(b.tau_v, 1 - x, atol=1e-9)


def test_trace_xi_on_transport(transport_model):
    tr = integrate(transport_model, InitialData.constant(0.0, 0.0), 0.0, (0.0, 2.0), m=20)
    c = trace_xi(tr, 1.0, 0.0, "v")
    assert c.terminal[0] == 0.0
    assert c.terminal[1] == pytest.approx(1.0, abs=1e-9)
    assert c.is_monotone()
    assert c.position(0.25) == pytest.approx(0.75, abs=1e-9)
    cu = trace_xi(tr, 0.0, 0.5, "u")
    assert cu.terminal == (1.0, pytest.approx(1.5, abs=1e-9))
    with pytest.raises(HorizonError):
        trace_xi(tr, 0.0, 1.5, "u")


def test_char_curve_rejects_unknown_family():
    with pytest.raises(ValueError):
        CharCurve(np.zeros(2), np.zeros(2), "w", (0.0, 0.0))
