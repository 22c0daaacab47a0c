"""Predictive sampled boundary feedback.

At every sampling instant ``t_k = k * theta`` the controller

1. predicts the state on the input characteristic ``(x, tau_v(t_k; x))``,
2. designs a virtual input ``U*`` for the future boundary trace ``v(0, .)``
   starting at ``tau_k = tau_v(t_k; 0)``,
3. solves the target system backwards relative to the transport direction
   (forward in ``x``) over ``[t_k, t_{k+1}]``, and
4. applies ``U(t) = v*(1, t)`` (minus the reflection ``g_v``) until ``t_{k+1}``.

A continuous-time variant returns the input rate ``dU/dt`` at one instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels as kn
from .characteristics import PredictionBundle, PredictionError, predict
from .model import InitialData, SystemModel
from .solver import ControlSignal, IntegrationError, Integrator, StateGrid, Trajectory, time_derivative_field

DEGENERATE_V0 = 1e-12


class ControllerError(RuntimeError):
    """Failure inside the control law; ``step`` is the sampling index."""

    def __init__(self, message: str, step: int = -1):
        self.step = step
        super().__init__(message if step < 0 else f"step {step}: {message}")


class ConfigError(ValueError):
    """Invalid controller configuration."""


@dataclass(frozen=True)
class ControllerConfig:
    """Sampling period, decay rate and mode of the controller.

    In tracking mode ``reference`` is the target ``phi(t)`` for ``v(0, t)``;
    ``reference_rate`` bounds ``|phi'|`` (estimated by sampling if omitted).
    ``smoothing`` is the tanh width of the continuous-time law.
    """

    theta: float = 0.25
    delta: float = 0.2
    mode: str = "stabilize"
    reference: Callable[[float], float] | None = None
    reference_rate: float | None = None
    smoothing: float = 1e-3
    cfl: float = 0.5
    defect_correction: bool = True
    chain_rule_dtau: bool = True

    def __post_init__(self) -> None:
        if not (self.theta > 0 and math.isfinite(self.theta)):
            raise ConfigError("theta must be positive")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ConfigError("delta must be positive")
        if self.mode not in ("stabilize", "track"):
            raise ConfigError("mode must be 'stabilize' or 'track'")
        if self.mode == "track" and self.reference is None:
            raise ConfigError("tracking mode needs a reference")
        if not (0 < self.cfl <= 1):
            raise ConfigError("cfl must lie in (0, 1]")
        if self.smoothing <= 0:
            raise ConfigError("smoothing must be positive")


# ---------------------------------------------------------------------------
# virtual input
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VirtualInput:
    """Piecewise-linear target trace for ``v(0, .)``, held constant outside its breakpoints."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, s: float | np.ndarray):
        out = np.interp(s, self.times, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def slope(self, s: float) -> float:
        j = int(np.searchsorted(self.times, s, side="right")) - 1
        if j < 0 or j >= self.times.size - 1:
            return 0.0
        return float((self.values[j + 1] - self.values[j]) / (self.times[j + 1] - self.times[j]))

    @property
    def start(self) -> float:
        return float(self.times[0])

    def max_slope(self) -> float:
        dt = np.diff(self.times)
        return float(np.max(np.abs(np.diff(self.values) / dt))) if dt.size else 0.0


def virtual_input(v0k: float, tau_k: float, delta: float) -> VirtualInput:
    """Linear decay from ``v0k`` at rate ``delta`` starting at ``tau_k``, then zero."""
    if delta <= 0:
        raise ConfigError("delta must be positive")
    if abs(v0k) < DEGENERATE_V0:
        return VirtualInput(np.array([tau_k, tau_k + 1.0]), np.zeros(2))
    return VirtualInput(np.array([tau_k, tau_k + abs(v0k) / delta]), np.array([float(v0k), 0.0]))


def virtual_input_tracking(
    v0k: float,
    tau_k: float,
    delta: float,
    phi: Callable[[float], float],
    horizon: float = 50.0,
    samples_per_unit: int = 200,
    phi_rate: float | None = None,
) -> VirtualInput:
    """Ramp from ``v0k`` towards ``phi`` at rate ``delta``, then follow ``phi``.

    ``phi`` is tabulated on ``[tau_k, tau_k + horizon]``.  Raises
    :class:`ConfigError` if ``delta`` is below the reference slope.
    """
    if delta <= 0:
        raise ConfigError("delta must be positive")
    n = max(2, int(math.ceil(horizon * samples_per_unit)))
    s = np.linspace(tau_k, tau_k + horizon, n + 1)
    ph = np.array([float(phi(si)) for si in s])
    rate = float(np.max(np.abs(np.diff(ph) / np.diff(s)))) if phi_rate is None else float(phi_rate)
    if rate > delta * (1 + 1e-9):
        raise ConfigError(f"delta={delta} is below the reference slope bound {rate:.6g}")
    gap0 = ph[0] - v0k
    if abs(gap0) < DEGENERATE_V0:
        return VirtualInput(s, ph)
    direction = math.copysign(1.0, gap0)
    ramp = v0k + direction * delta * (s - tau_k)
    g = direction * (ph - ramp)  # positive until the ramp reaches phi
    hit = np.nonzero(g <= 0.0)[0]
    if hit.size == 0:
        return VirtualInput(np.array([tau_k, s[-1]]), np.array([v0k, ramp[-1]]))
    j = int(hit[0])
    # linear interpolation of the crossing between samples j-1 and j
    a, b = g[j - 1], g[j]
    frac = a / (a - b) if a != b else 1.0
    s_star = s[j - 1] + frac * (s[j] - s[j - 1])
    v_star = v0k + direction * delta * (s_star - tau_k)
    keep = s > s_star
    return VirtualInput(
        np.concatenate([[tau_k, s_star], s[keep]]),
        np.concatenate([[v0k, v_star], ph[keep]]),
    )


# ---------------------------------------------------------------------------
# target dynamics
# ---------------------------------------------------------------------------

FIELDS = ("u_star", "v_star", "u_star_t", "v_star_t", "dtau", "nu", "mu", "tau")


@dataclass
class TargetState:
    """Solution of the target system on ``[t_k, t_{k+1}]``.

    ``fields[name]`` has shape ``(len(t), m+1)``; ``U`` is the extracted input.
    """

    t: np.ndarray
    fields: dict[str, np.ndarray]
    U: np.ndarray

    @property
    def m(self) -> int:
        return self.fields["u_star"].shape[1] - 1

    def __getattr__(self, name: str):
        fields = self.__dict__.get("fields", {})
        if name in fields:
            return fields[name]
        raise AttributeError(name)


def _defect(ks: kn.KernelSet, bundle: PredictionBundle, p: np.ndarray, enabled: bool) -> np.ndarray:
    dd = np.zeros(bundle.m)
    if enabled:
        with np.errstate(all="ignore"):
            ks.xode_defect(bundle.u, bundle.v, p, dd)
    return dd


def solve_target_dynamics(
    model: SystemModel,
    bundle: PredictionBundle,
    U_star: VirtualInput,
    span: tuple[float, float],
    cfl: float = 0.5,
    defect_correction: bool = True,
    mode: str | None = None,
    chain_rule_dtau: bool = True,
) -> TargetState:
    """Solve the target system forward in time from the prediction bundle.

    The x-ODEs for ``v*`` and its rate are marched with Heun's method from
    ``x = 0``; ``u*`` and its rate are advanced by explicit Euler with
    upwinding against the speed ``-mu``.  With ``defect_correction`` the
    per-cell discretisation defect of the ``v*`` march at ``t_k`` is carried
    along, so the input is continuous at ``t_k``.  ``chain_rule_dtau``
    selects the exact rate of the characteristic time (the integrand is
    weighted by that rate itself); switching it off uses the linearised
    integral.
    """
    t0, t1 = float(span[0]), float(span[1])
    if not t1 > t0:
        raise ValueError("empty time span")
    ks = kn.get_kernels(model, mode)
    p = model.nominal().param_vector()
    m = bundle.m
    dd = _defect(ks, bundle, p, defect_correction)
    _, lv, _, _ = model.eval_coeffs(bundle.x, bundle.u, bundle.v, check=False)
    lu = model.eval_coeffs(bundle.x, bundle.u, bundle.v, check=False)[0]
    with np.errstate(all="ignore"):
        mu0 = float(np.nanmax(lu * lv / (lu + lv)))
    cap = int(2 * math.ceil((t1 - t0) * max(mu0, 1e-3) * m / cfl)) + 16
    sb = np.asarray(U_star.times, dtype=float)
    Sb = np.asarray(U_star.values, dtype=float)
    for _ in range(12):
        rows_t = np.empty(cap)
        rows = np.empty((cap, len(FIELDS), m + 1))
        Uo = np.empty(cap)
        with np.errstate(all="ignore"):
            st, r, node = ks.target_solve(
                t0, t1, bundle.tau_v, bundle.u, bundle.u_t, dd, sb, Sb, p, float(cfl), bool(chain_rule_dtau), rows_t, rows, Uo
            )
        if st != kn.BUFFER_FULL:
            break
        cap *= 2
    if st != kn.OK:
        raise ControllerError(f"target dynamics failed: {kn.STATUS_TEXT[st]} at node {node} (delta may be too large)")
    fields = {name: rows[:r, j, :].copy() for j, name in enumerate(FIELDS)}
    return TargetState(rows_t[:r].copy(), fields, Uo[:r].copy())


def control_segment(target: TargetState) -> ControlSignal:
    """Piecewise-linear input through the target's time grid."""
    return ControlSignal(target.t, target.U)


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    k: int
    t_k: float
    tau_k: float
    v0k: float
    norm_w_inf: float
    norm_wt_inf: float
    U_at_tk: float


@dataclass
class ClosedLoopResult:
    """Plant trajectory, applied input and per-step records."""

    trajectory: Trajectory
    signal: ControlSignal
    steps: list[StepRecord]
    virtual_inputs: list[VirtualInput]
    segments: list[ControlSignal]
    bundles: list[PredictionBundle] = field(default_factory=list)
    targets: list[TargetState] = field(default_factory=list)

    def diagnostics_csv(self, path: str | Path) -> None:
        rows = [[s.k, s.t_k, s.tau_k, s.v0k, s.norm_w_inf, s.norm_wt_inf, s.U_at_tk] for s in self.steps]
        with open(path, "w", newline="\n") as fh:
            fh.write("k,t_k,tau_k,v0k,norm_w_inf,norm_wt_inf,U_at_tk\n")
            for r in rows:
                fh.write(f"{r[0]:d}," + ",".join(f"{v:.12e}" for v in r[1:]) + "\n")

    def boundary_csv(self, path: str | Path, times: Sequence[float] | None = None) -> None:
        tq = self.trajectory.default_times() if times is None else np.asarray(times, dtype=float)
        _, us, vs = self.trajectory.sample(tq)
        U = np.asarray(self.signal(tq), dtype=float)
        norm = np.maximum(np.max(np.abs(us), axis=1), np.max(np.abs(vs), axis=1))
        data = np.column_stack([tq, U, vs[:, 0], norm])
        np.savetxt(path, data, delimiter=",", header="t,U,v0,norm_inf", comments="", fmt="%.12e")

    def virtual_input_at(self, s: float) -> float:
        """Value of the most recent virtual input whose domain contains ``s``."""
        best = None
        for vi in self.virtual_inputs:
            if vi.start <= s:
                best = vi
        return float("nan") if best is None else best(s)


Measurement = Callable[[StateGrid, int, float], StateGrid]


def run_closed_loop(
    model: SystemModel,
    w0: InitialData | StateGrid,
    config: ControllerConfig,
    t_end: float,
    m: int = 100,
    tol: float = 1e-7,
    plant_model: SystemModel | None = None,
    measurement: Measurement | None = None,
    keep_details: bool = False,
    mode: str | None = None,
    check_compatibility: bool = True,
    fill_in: str = "extrapolate",
) -> ClosedLoopResult:
    """Run the sampled feedback loop on ``[0, t_end]``.

    ``model`` is the controller's (nominal) model; ``plant_model`` defaults
    to it.  ``measurement(W_k, k, U_prev)`` may corrupt the exact state
    before it is handed to the predictor.

    ``fill_in`` selects the compatible input used on the prediction
    rectangle: ``"hold"`` keeps ``U(t_k)`` constant, ``"extrapolate"``
    continues the previous segment with its final slope.
    """
    if fill_in not in ("hold", "extrapolate"):
        raise ConfigError("fill_in must be 'hold' or 'extrapolate'")
    if not t_end > 0:
        raise ConfigError("t_end must be positive")
    nominal = model.nominal()
    plant = plant_model if plant_model is not None else nominal
    grid = StateGrid.from_initial(w0, m, 0.0) if isinstance(w0, InitialData) else StateGrid(w0.u, w0.v, 0.0)
    if grid.m != m:
        raise ValueError(f"initial grid has m={grid.m}, expected {m}")
    if check_compatibility:
        r0 = abs(float(grid.u[0] - nominal.boundary_u(grid.v[0], 0.0)))
        if r0 > tol * max(1.0, grid.norm_inf()):
            raise ConfigError(f"initial data violate u(0)=g_u(v(0)) by {r0:.3e}")
    U0 = float(plant.input_for_boundary(grid.v[-1], grid.u[-1], 0.0))
    integ = Integrator(plant, m, tol, ControlSignal.constant(U0, 0.0), 0.0, grid.to_vector(), mode)
    steps: list[StepRecord] = []
    vins: list[VirtualInput] = []
    segs: list[ControlSignal] = []
    bundles: list[PredictionBundle] = []
    targets: list[TargetState] = []
    applied: ControlSignal | None = None
    U_prev = U0
    n_steps = int(math.ceil(t_end / config.theta - 1e-9))
    for k in range(n_steps):
        t_k = k * config.theta
        t_next = min((k + 1) * config.theta, t_end)
        W = integ.trajectory.state(t_k) if k > 0 else grid
        W = StateGrid(W.u, W.v, t_k)
        W_meas = measurement(W, k, U_prev) if measurement is not None else W
        fill = None
        if fill_in == "extrapolate" and segs:
            U_c = float(nominal.input_for_boundary(W_meas.v[-1], W_meas.u[-1], t_k))
            slope = _left_slope(segs[-1], t_k)
            span = 10.0 * max(1.0, config.theta)
            fill = ControlSignal([t_k, t_k + span], [U_c, U_c + slope * span])
        try:
            bundle = predict(nominal, W_meas, t_k, tol=tol, mode=mode, check=measurement is None, fill_in=fill)
        except (PredictionError, IntegrationError, ValueError) as exc:
            raise ControllerError(str(exc), k) from exc
        if config.mode == "track":
            vin = virtual_input_tracking(bundle.v0k, bundle.tau_k, config.delta, config.reference, phi_rate=config.reference_rate)
        else:
            vin = virtual_input(bundle.v0k, bundle.tau_k, config.delta)
        try:
            target = solve_target_dynamics(nominal, bundle, vin, (t_k, t_next), config.cfl, config.defect_correction, mode, config.chain_rule_dtau)
        except ControllerError as exc:
            raise ControllerError(str(exc), k) from exc
        seg = control_segment(target)
        try:
            wt = time_derivative_field(plant, W, t_k, U_t_value=seg.slope(t_k), mode=mode)
            norm_wt = wt.norm_inf()
        except IntegrationError:
            norm_wt = float("nan")
        steps.append(StepRecord(k, t_k, bundle.tau_k, bundle.v0k, W.norm_inf(), norm_wt, float(seg(t_k))))
        vins.append(vin)
        segs.append(seg)
        if keep_details:
            bundles.append(bundle)
            targets.append(target)
        applied = seg if applied is None else applied.splice(seg, t_k)
        integ.set_signal(seg, t_k)
        try:
            integ.advance(t_next)
        except IntegrationError as exc:
            raise ControllerError(f"plant integration failed: {exc}", k) from exc
        U_prev = float(seg(t_next))
    traj = integ.trajectory
    return ClosedLoopResult(traj, traj.signal, steps, vins, segs, bundles, targets)


def _left_slope(signal: ControlSignal, t: float) -> float:
    j = int(np.searchsorted(signal.times, t, side="left")) - 1
    if j < 0 or j >= signal.times.size - 1:
        return 0.0
    dt = signal.times[j + 1] - signal.times[j]
    return 0.0 if dt <= 0 else float((signal.values[j + 1] - signal.values[j]) / dt)


def continuous_law_step(
    model: SystemModel,
    W_t: StateGrid,
    t: float | None = None,
    delta: float = 0.2,
    smoothing: float = 1e-3,
    tol: float = 1e-7,
    mode: str | None = None,
    bundle: PredictionBundle | None = None,
) -> float:
    """Input rate ``dU/dt`` of the continuous-time law at one instant.

    The sign of the predicted ``v(0, tau)`` is smoothed by ``tanh(./smoothing)``.
    """
    t = W_t.t if t is None else float(t)
    nominal = model.nominal()
    if bundle is None:
        bundle = predict(nominal, StateGrid(W_t.u, W_t.v, t), t, tol=tol, mode=mode)
    ks = kn.get_kernels(nominal, mode)
    p = nominal.param_vector()
    qv0 = -delta * math.tanh(bundle.v0k / smoothing) if delta > 0 else 0.0
    _, g_v, g_t = (float(a) for a in ks.bnd_u(bundle.v0k, bundle.tau_k, p))
    qu = bundle.u_t.copy()
    qu[0] = g_v * qv0 + g_t
    dd = _defect(ks, bundle, p, True)
    vo = np.empty(bundle.m + 1)
    qvo = np.empty(bundle.m + 1)
    with np.errstate(all="ignore"):
        st, node = ks.xode_march(bundle.u, qu, bundle.v0k, qv0, dd, p, vo, qvo)
    if st != kn.OK:
        raise ControllerError(f"x-march failed: {kn.STATUS_TEXT[st]} at node {node}")
    _, gv_u = (float(a) for a in ks.bnd_v(float(bundle.u[-1]), 0.0, t, p))
    return float((qvo[-1] - gv_u * qu[-1]) / p[6])


__all__ = [
    "ClosedLoopResult",
    "ConfigError",
    "ControllerConfig",
    "ControllerError",
    "StepRecord",
    "TargetState",
    "VirtualInput",
    "continuous_law_step",
    "control_segment",
    "run_closed_loop",
    "solve_target_dynamics",
    "virtual_input",
    "virtual_input_tracking",
]
