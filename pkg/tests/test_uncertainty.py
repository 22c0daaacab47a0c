from __future__ import annotations

import numpy as np
import pytest

from artifact.controller import ControllerConfig, run_closed_loop
from artifact.model import InitialData
from artifact.solver import StateGrid
from artifact.uncertainty import (
    CHANNELS,
    GROUPED_CHANNELS,
    SpecError,
    UncertaintySpec,
    corrupt_measurement,
    perturb_model,
    realization,
    run_ensemble,
)


def test_example_spec_has_512_corners():
    spec = UncertaintySpec.example()
    assert spec.channels == CHANNELS
    assert spec.n_corners == 512
    assert UncertaintySpec(channels=GROUPED_CHANNELS).n_corners == 128


@pytest.mark.parametrize(
    "kwargs",
    [dict(eps_F=-0.1), dict(eps_w=1.5), dict(eps_Lambda=1.0), dict(channels=("Lambda", "lambda_u")), dict(channels=("x",))],
)
def test_spec_validation(kwargs):
    with pytest.raises(SpecError):
        UncertaintySpec(**kwargs)


def test_certificate_restriction():
    UncertaintySpec(eps_U=0.25).check_certificate()
    with pytest.raises(SpecError):
        UncertaintySpec(eps_U=0.3).check_certificate()


def test_corner_enumeration():
    spec = UncertaintySpec.example()
    first = realization(spec, 0, seed=1)
    last = realization(spec, 511, seed=1)
    assert first.kind == last.kind == "corner"
    np.testing.assert_allclose(first.values, -spec.bounds())
    np.testing.assert_allclose(last.values, spec.bounds())
    # bit 2 is f_u
    r = realization(spec, 4, seed=1)
    assert r.element("f_u") == pytest.approx(0.10) and r.element("f_v") == pytest.approx(-0.10)
    rand = realization(spec, 600, seed=1)
    assert rand.kind == "random"
    assert np.all(np.abs(rand.values) <= spec.bounds())
    assert realization(spec, 600, seed=1) == rand
    assert realization(spec, 600, seed=2) != rand


def test_perturbed_source_and_speed(example_model):
    spec = UncertaintySpec.example()
    r = realization(spec, 4, seed=0)  # f_u at +10%, lambda_u at -4%
    pm = perturb_model(example_model, r)
    lu, _, fu, _ = pm.eval_coeffs(0.3, 0.7, 0.2)
    assert float(fu) == pytest.approx(2 / 3 * 1.1 * (0.7 - 0.2), rel=1e-14)
    assert float(lu) == pytest.approx(0.96, rel=1e-14)


def test_corrupted_measurement_is_compatible(example_model):
    x = np.linspace(0, 1, 21)
    W = StateGrid(1 + 0.1 * np.sin(3 * x), 1 - 0.2 * x**2, 0.4)
    out = corrupt_measurement(W, (0.02, -0.02), 0.7, example_model)
    assert abs(out.u[0] - float(example_model.boundary_u(out.v[0], 0.4))) <= 1e-12
    assert abs(out.v[-1] - float(example_model.boundary_v(out.u[-1], 0.7, 0.4))) <= 1e-12
    same = corrupt_measurement(StateGrid(np.ones(21), np.ones(21)), 0.0, 1.0, example_model)
    np.testing.assert_array_equal(same.u, np.ones(21))


def test_zero_spec_reproduces_nominal_loop(example):
    model, w0, _ = example
    cfg = ControllerConfig(0.25, 0.2)
    nominal = run_closed_loop(model, w0, cfg, 1.0, m=20)
    ens = run_ensemble(model, w0, cfg, UncertaintySpec(), 2, 1.0, m=20, sample_dt=0.25, workers=1)
    _, us, vs = nominal.trajectory.sample(ens.times)
    ref = np.maximum(np.max(np.abs(us), axis=1), np.max(np.abs(vs), axis=1))
    np.testing.assert_allclose(ens.norms[0], ref, atol=1e-10)
    np.testing.assert_allclose(ens.norms[1], ref, atol=1e-10)


def test_small_ensemble_outputs_are_deterministic(example, tmp_path):
    model, w0, _ = example
    cfg = ControllerConfig(0.25, 0.2)
    spec = UncertaintySpec.example()
    a = run_ensemble(model, w0, cfg, spec, 3, 1.0, seed=5, m=20, sample_dt=0.25, workers=1)
    b = run_ensemble(model, w0, cfg, spec, 3, 1.0, seed=5, m=20, sample_dt=0.25, workers=1)
    assert a.failure_count == 0
    assert a.is_ordered()
    assert a.percentiles_csv() == b.percentiles_csv()
    assert a.runs_csv() == b.runs_csv()
    a.runs_csv(tmp_path / "runs.csv")
    lines = (tmp_path / "runs.csv").read_text().splitlines()
    assert lines[0] == "run," + ",".join(CHANNELS) + ",final_norm,status"
    assert len(lines) == 4
    assert a.percentiles_csv().splitlines()[0] == "t,p01,p25,p50,p75,p99"


def test_ensemble_needs_two_runs(example):
    model, w0, _ = example
    with pytest.raises(SpecError):
        run_ensemble(model, w0, ControllerConfig(), UncertaintySpec(), 1, 1.0)
