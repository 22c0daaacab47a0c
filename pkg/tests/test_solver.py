from __future__ import annotations

import numpy as np
import pytest

from artifact.model import InitialData, SystemModel
from artifact.solver import (
    CompatibilityError,
    ControlSignal,
    StateGrid,
    integrate,
    rhs,
    transport_solution,
)

from conftest import sin2_profile


def test_equilibrium_is_preserved(example_model):
    tr = integrate(example_model, InitialData.constant(1.0, 1.0), 1.0, (0.0, 2.0), m=40)
    times = np.linspace(0, 2, 21)
    _, us, vs = tr.sample(times)
    assert np.max(np.abs(us - 1)) <= 1e-12
    assert np.max(np.abs(vs - 1)) <= 1e-12


def test_zero_state_stays_zero(example_model):
    tr = integrate(example_model, InitialData.constant(0.0, 0.0), 0.0, (0.0, 1.0), m=30)
    assert np.max(tr.norm_inf(np.linspace(0, 1, 11))) == 0.0


def test_transport_matches_characteristics(transport_model):
    errs = []
    for m in (50, 100):
        x = np.linspace(0, 1, m + 1)
        grid = StateGrid(sin2_profile(x), sin2_profile(x))
        tr = integrate(transport_model, grid, 0.5, (0.0, 0.5), m=m, tol=1e-10)
        g = tr.state(0.5)
        ue, ve = transport_solution(sin2_profile, sin2_profile, 0.5, g.x, U=lambda t: 0.5)
        errs.append(max(np.max(np.abs(g.u - ue)), np.max(np.abs(g.v - ve))))
    assert errs[0] < 0.03
    assert 1.6 <= errs[0] / errs[1] <= 2.4


def test_incompatible_data_are_rejected(example_model):
    with pytest.raises(CompatibilityError):
        integrate(example_model, InitialData.constant(1.0, 1.0), 0.0, (0.0, 0.1), m=10)
    tr = integrate(example_model, InitialData.constant(1.0, 1.0), 0.0, (0.0, 0.1), m=10, check_compatibility=False)
    assert tr.state(0.1).v[-1] == 0.0


def test_rhs_of_linear_profile_is_upwind(transport_model):
    x = np.linspace(0, 1, 11)
    grid = StateGrid(1 + x, 1 - x, 0.0)
    d = rhs(transport_model, grid, U=0.0)
    # u_t = -u_x = -1 and v_t = v_x = -1 in the interior
    np.testing.assert_allclose(d.u[1:], -1.0, atol=1e-12)
    np.testing.assert_allclose(d.v[:-1], -1.0, atol=1e-12)


def test_control_signal_interpolation_and_splice():
    s = ControlSignal([0, 1, 2], [0, 1, 0])
    assert s(0.5) == 0.5
    assert s.slope(1.5) == -1
    assert s.lipschitz() == 1
    c = ControlSignal.constant(3.0)
    assert c(10.0) == 3.0
    joined = s.splice(ControlSignal([1.5, 3], [5, 5]), 1.5)
    assert joined(1.0) == 1.0 and joined(2.5) == 5.0


def test_trajectory_csv(tmp_path, example_model):
    tr = integrate(example_model, InitialData.constant(1.0, 1.0), 1.0, (0.0, 0.5), m=4)
    out = tmp_path / "traj.csv"
    tr.to_csv(out, [0.0, 0.5])
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,u,v"
    assert len(lines) == 1 + 2 * 5
    assert lines[1] == "0.000000000000e+00,0.000000000000e+00,1.000000000000e+00,1.000000000000e+00"


def test_time_varying_input_enters_at_right_boundary(transport_model):
    x = np.linspace(0, 1, 41)
    sig = ControlSignal([0.0, 1.0], [0.0, 1.0])
    tr = integrate(transport_model, StateGrid(np.zeros_like(x), np.zeros_like(x)), sig, (0, 1), m=40)
    g = tr.state(1.0)
    assert g.v[-1] == pytest.approx(1.0)
    assert g.v[0] < 0.1


def test_nonhyperbolic_state_fails_cleanly():
    model = SystemModel.from_strings("1", "1-v", "0", "0", "v")
    from artifact.solver import IntegrationError

    x = np.linspace(0, 1, 11)
    with pytest.raises(IntegrationError):
        integrate(model, StateGrid(np.full(11, 2.0), np.full(11, 2.0)), 2.0, (0, 0.1), m=10)
