"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``PASS``/``FAIL`` line (also collected into the pytest
terminal summary) before asserting.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from artifact.bounds import compute_report, lemma1_bound
from artifact.characteristics import predict
from artifact.controller import ControllerConfig, run_closed_loop
from artifact.model import InitialData
from artifact.solver import ControlSignal, StateGrid, integrate, transport_solution
from artifact.uncertainty import UncertaintySpec, run_ensemble

from conftest import ACCEPTANCE_LINES, sin2_profile

TOL = 1e-7
THETA = 0.25
DELTA = 0.2


def report(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def loops(example):
    """Closed loops at m=100 and m=200, with the m=100 runtime on warm kernels."""
    model, w0, _ = example
    cfg = ControllerConfig(THETA, DELTA)
    run_closed_loop(model, w0, cfg, 0.5, m=20, tol=TOL)  # compile the kernels
    start = time.perf_counter()
    r100 = run_closed_loop(model, w0, cfg, 15.0, m=100, tol=TOL)
    elapsed = time.perf_counter() - start
    r200 = run_closed_loop(model, w0, cfg, 15.0, m=200, tol=TOL)
    return r100, r200, elapsed


def test_criterion_1_nominal_closed_loop(loops):
    res, _, elapsed = loops
    tau0, v0 = res.steps[0].tau_k, res.steps[0].v0k
    tq = np.linspace(2.1, 6.9, 481)
    _, v_trace, _ = res.trajectory.boundary_trace(tq)
    lin_err = float(np.max(np.abs(v_trace - (1.0 - DELTA * (tq - 2.0)))))
    late = np.linspace(8.5, 15.0, 651)
    late_norm = float(np.max(res.trajectory.norm_inf(late)))
    ok = abs(tau0 - 2) <= 0.02 and abs(v0 - 1) <= 0.02 and lin_err <= 0.05 and late_norm <= 0.02 and elapsed <= 60
    report(
        1,
        ok,
        f"tau0={tau0:.6f} v0={v0:.6f} ramp_err={lin_err:.3e} (<=0.05) "
        f"norm_after_8.5={late_norm:.3e} (<=0.02) runtime={elapsed:.2f}s (<=60)",
    )
    assert ok


def _perturbed_state(model, x: np.ndarray, rng: np.random.Generator) -> StateGrid:
    """Equilibrium plus a random Lipschitz bump, repaired to satisfy u(0)=g_u(v(0))."""
    du = sum(rng.uniform(-0.05, 0.05) * np.sin(k * np.pi * x + rng.uniform(0, 2 * np.pi)) for k in range(1, 4))
    dv = sum(rng.uniform(-0.05, 0.05) * np.sin(k * np.pi * x + rng.uniform(0, 2 * np.pi)) for k in range(1, 4))
    u = 1.0 + du
    v = 1.0 + dv
    u = u + (float(model.boundary_u(v[0], 0.0)) - u[0]) * (1.0 - x)
    u[0] = float(model.boundary_u(v[0], 0.0))
    return StateGrid(u, v, 0.0)


def test_criterion_2_fill_in_independence(example_model):
    rng = np.random.default_rng(20240601)
    m = 100
    x = np.linspace(0.0, 1.0, m + 1)
    worst = 0.0
    for _ in range(10):
        W = _perturbed_state(example_model, x, rng)
        U_c = float(example_model.input_for_boundary(W.v[-1], W.u[-1], 0.0))
        amp = rng.uniform(0.05, 0.3)
        hold = predict(example_model, W, 0.0, tol=TOL)
        alt = predict(example_model, W, 0.0, tol=TOL, fill_in=lambda t, a=amp: U_c + a * math.sin(2 * math.pi * t))
        worst = max(worst, max(hold.max_difference(alt).values()))
    threshold = 50 * TOL
    ok = worst <= threshold
    report(2, ok, f"max bundle discrepancy over 10 states {worst:.3e} (<= {threshold:.1e})")
    assert ok


def _round_trip_errors(res, n_steps: int) -> np.ndarray:
    errs = []
    for k in range(n_steps):
        a, b = res.steps[k].tau_k, res.steps[k + 1].tau_k
        s = np.linspace(a, b, 41)
        _, v_trace, _ = res.trajectory.boundary_trace(s)
        errs.append(float(np.max(np.abs(v_trace - res.virtual_inputs[k](s)))))
    return np.array(errs)


def test_criterion_3_round_trip(loops):
    r100, r200, _ = loops
    # every step whose successor's characteristic time lies inside both runs
    n = min(len(r100.steps), len(r200.steps)) - 1
    n = sum(1 for k in range(n) if r100.steps[k + 1].tau_k <= r100.trajectory.t1 and r200.steps[k + 1].tau_k <= r200.trajectory.t1)
    e100 = _round_trip_errors(r100, n)
    e200 = _round_trip_errors(r200, n)
    bound_ok = bool(np.all(e100 <= 5 / 100)) and bool(np.all(e200 <= 5 / 200))
    ratio = float(np.max(e100) / np.max(e200))
    halving_ok = 2.0 * 0.75 <= ratio <= 2.0 * 1.25
    ok = bound_ok and halving_ok
    report(
        3,
        ok,
        f"{n} steps, max err m=100 {np.max(e100):.3e} (<=0.05), m=200 {np.max(e200):.3e} (<=0.025), "
        f"ratio {ratio:.3f} (in [1.5, 2.5])",
    )
    assert ok


def test_criterion_4_lemma1_oracle():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        gamma = rng.uniform(0.05, 3.0)
        T = rng.uniform(0.1, 2.0)
        alpha0 = rng.uniform(0.0, 1.0) * math.exp(-gamma * T)
        bound = lemma1_bound(alpha0, gamma, T)
        assert bound.precondition_ok
        sol = solve_ivp(lambda t, a: gamma * (a * a + a), (0, T), [alpha0], method="DOP853", rtol=1e-12, atol=1e-15)
        exact = sol.y[0, -1]
        worst = max(worst, abs(bound(T) - exact) / abs(exact))
    ok = worst <= 1e-6
    report(4, ok, f"max relative difference {worst:.3e} (<= 1e-6) over 20 draws")
    assert ok


def test_criterion_5_transport_convergence(transport_model):
    errs = []
    for m in (50, 100, 200, 400):
        x = np.linspace(0.0, 1.0, m + 1)
        tr = integrate(transport_model, StateGrid(sin2_profile(x), sin2_profile(x)), ControlSignal.constant(0.5), (0.0, 0.5), m=m, tol=1e-10)
        g = tr.state(0.5)
        ue, ve = transport_solution(sin2_profile, sin2_profile, 0.5, g.x, U=lambda t: 0.5)
        errs.append(max(float(np.max(np.abs(g.u - ue))), float(np.max(np.abs(g.v - ve)))))
    ratios = [errs[i] / errs[i + 1] for i in range(3)]
    ok = all(1.6 <= r <= 2.4 for r in ratios)
    report(5, ok, "errors " + ", ".join(f"{e:.3e}" for e in errs) + " ratios " + ", ".join(f"{r:.3f}" for r in ratios) + " (in [1.6, 2.4])")
    assert ok


def test_criterion_6_equilibria(example_model):
    times = np.linspace(0.0, 5.0, 501)
    tr = integrate(example_model, InitialData.constant(1.0, 1.0), 1.0, (0.0, 5.0), m=100, tol=TOL)
    _, us, vs = tr.sample(times)
    eq = float(max(np.max(np.abs(us - 1)), np.max(np.abs(vs - 1))))
    tz = integrate(example_model, InitialData.constant(0.0, 0.0), 0.0, (0.0, 5.0), m=100, tol=TOL)
    zero = float(np.max(tz.norm_inf(times)))
    ok = eq <= 1e-8 and zero <= 1e-12
    report(6, ok, f"equilibrium deviation {eq:.3e} (<=1e-8), zero-state norm {zero:.3e} (<=1e-12)")
    assert ok


@pytest.mark.slow
def test_criterion_7_ensemble(example):
    model, w0, _ = example
    spec = UncertaintySpec.example()
    assert spec.n_corners == 512
    start = time.perf_counter()
    res = run_ensemble(model, w0, ControllerConfig(THETA, DELTA), spec, 1024, 15.0, seed=0, m=50, tol=TOL)
    elapsed = time.perf_counter() - start
    final = float(np.nanmax(res.final_norms))
    corners = sum(1 for r in res.realizations if r.kind == "corner")
    ok = res.failure_count == 0 and final < 0.1 and res.is_ordered() and corners == 512
    report(
        7,
        ok,
        f"1024 runs ({corners} corners), failures={res.failure_count}, max final norm {final:.3e} (<0.1), "
        f"ordered={res.is_ordered()}, runtime {elapsed:.0f}s",
    )
    assert ok


def test_criterion_8_bounds_report(example_model):
    a = compute_report(example_model, 1.0, THETA, state_box=2.0)
    b = compute_report(example_model, 1.0, THETA, state_box=2.0)
    kappa1_hand = max(1.0, 2.0 + abs(math.cos(2.0))) * math.exp(20.0 / 3.0)
    d_linv = abs(a.l_Lambda_inv - 5.0)
    d_lf = abs(a.l_F - 4.0 / 3.0)
    d_k1 = abs(a.kappa1 - kappa1_hand) / kappa1_hand
    identical = a.to_csv() == b.to_csv() and a.to_text() == b.to_text()
    ok = d_linv <= 1e-10 and d_lf <= 1e-10 and d_k1 <= 1e-10 and identical
    report(
        8,
        ok,
        f"|l_Lambda_inv-5|={d_linv:.1e} |l_F-4/3|={d_lf:.1e} kappa1 rel err={d_k1:.1e} (all <=1e-10), byte-identical={identical}",
    )
    assert ok


def test_criterion_9_virtual_input_chain(loops):
    res, _, _ = loops
    worst = 0.0
    for a, b in zip(res.virtual_inputs[:-1], res.virtual_inputs[1:]):
        end = max(a.times[-1], b.times[-1])
        s = np.linspace(b.start, end, 801)
        worst = max(worst, float(np.max(np.abs(a(s) - b(s)))))
    slope = max(v.max_slope() for v in res.virtual_inputs)
    ok = worst <= 10 * TOL and slope <= DELTA * (1 + 1e-12)
    report(9, ok, f"max overlap mismatch {worst:.3e} (<= {10 * TOL:.1e}), max |dU*/dt| {slope:.6f} (<= {DELTA})")
    assert ok
