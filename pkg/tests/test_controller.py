from __future__ import annotations

import numpy as np
import pytest

from artifact.characteristics import predict
from artifact.controller import (
    ConfigError,
    ControllerConfig,
    continuous_law_step,
    run_closed_loop,
    solve_target_dynamics,
    virtual_input,
    virtual_input_tracking,
)
from artifact.model import InitialData
from artifact.solver import StateGrid


def test_virtual_input_ramp():
    vi = virtual_input(1.0, 2.0, 0.2)
    assert vi(2.0) == 1.0
    assert vi(4.5) == pytest.approx(0.5)
    assert vi(7.0) == 0.0 and vi(100.0) == 0.0
    assert vi.max_slope() == pytest.approx(0.2)
    neg = virtual_input(-0.4, 0.0, 0.2)
    assert neg(1.0) == pytest.approx(-0.2)
    assert neg(2.0) == 0.0


def test_virtual_input_tracking_reaches_reference():
    vi = virtual_input_tracking(0.0, 0.0, 0.5, lambda s: 1.0, horizon=10.0)
    assert vi(1.0) == pytest.approx(0.5)
    assert vi(2.0) == pytest.approx(1.0)
    assert vi(8.0) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        virtual_input_tracking(0.0, 0.0, 0.1, lambda s: np.sin(s), horizon=10.0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(theta=0.0), dict(delta=-1.0), dict(mode="chase"), dict(mode="track"), dict(cfl=1.5), dict(smoothing=0.0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        ControllerConfig(**kwargs)


def test_target_dynamics_on_equilibrium_reproduce_ramp(example_model):
    grid = StateGrid(*InitialData.constant(1.0, 1.0).sample(40))
    b = predict(example_model, grid, 0.0)
    vi = virtual_input(b.v0k, b.tau_k, 0.2)
    ts = solve_target_dynamics(example_model, b, vi, (0.0, 0.25))
    assert ts.t[0] == 0.0 and ts.t[-1] == pytest.approx(0.25)
    # the input is continuous with the held equilibrium value
    assert ts.U[0] == pytest.approx(1.0, abs=1e-9)
    assert np.all(np.diff(ts.U) <= 1e-12)


def test_short_closed_loop_is_continuous(example):
    model, w0, _ = example
    res = run_closed_loop(model, w0, ControllerConfig(0.25, 0.2), 1.0, m=30)
    assert len(res.steps) == 4
    assert res.steps[0].tau_k == pytest.approx(2.0, abs=0.05)
    for k in range(1, len(res.segments)):
        tk = res.steps[k].t_k
        assert abs(res.segments[k - 1](tk) - res.segments[k](tk)) < 1e-3


def test_closed_loop_csv_outputs(tmp_path, example):
    model, w0, _ = example
    res = run_closed_loop(model, w0, ControllerConfig(0.25, 0.2), 0.5, m=20)
    res.diagnostics_csv(tmp_path / "d.csv")
    res.boundary_csv(tmp_path / "b.csv", [0.0, 0.25, 0.5])
    d = (tmp_path / "d.csv").read_text().splitlines()
    assert d[0] == "k,t_k,tau_k,v0k,norm_w_inf,norm_wt_inf,U_at_tk"
    assert len(d) == 1 + len(res.steps)
    b = (tmp_path / "b.csv").read_text().splitlines()
    assert b[0] == "t,U,v0,norm_inf" and len(b) == 4


def test_tracking_constant_reference(example):
    model, w0, _ = example
    cfg = ControllerConfig(0.25, 0.2, mode="track", reference=lambda s: 0.5)
    res = run_closed_loop(model, w0, cfg, 7.0, m=40)
    tq = np.linspace(5.0, 7.0, 41)
    _, v0, _ = res.trajectory.boundary_trace(tq)
    assert np.max(np.abs(v0 - 0.5)) < 0.05


def test_continuous_law_on_zero_state(example_model):
    grid = StateGrid(*InitialData.constant(0.0, 0.0).sample(20))
    assert continuous_law_step(example_model, grid, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_continuous_law_on_equilibrium_decreases_input(example_model):
    grid = StateGrid(*InitialData.constant(1.0, 1.0).sample(20))
    rate = continuous_law_step(example_model, grid, 0.0, delta=0.2)
    assert rate < 0
