"""Characteristic lines, determinate-set prediction and the prediction bundle.

``tau_v(t; x)`` is the time at which the ``v``-characteristic that leaves
``x = 1`` at time ``t`` reaches position ``x``:

    tau_v(t; x) = t + int_x^1 1 / lambda_v(xi, w(xi, tau_v(t; xi))) dxi.

``tau_u`` is the mirror image for the ``u`` family starting at ``x = 0``.
The prediction at a sampling instant ``t_k`` integrates the nominal model
forward from the measured state on a rectangle ``[0,1] x [t_k, t_k + H]``
with a compatible constant input.  The solution on the determinate set does
not depend on that input, and only the values on the curve
``(x, tau_v(t_k; x))`` are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels as kn
from .model import SystemModel
from .solver import ControlSignal, IntegrationError, Integrator, StateGrid, Trajectory


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class HorizonError(RuntimeError):
    """The trajectory does not reach far enough in time; extend the horizon."""


class PredictionError(RuntimeError):
    """Prediction failed inside the determinate set (e.g. gradient blow-up)."""


# ---------------------------------------------------------------------------
# characteristic times on a stored trajectory
# ---------------------------------------------------------------------------


def _march(trajectory: Trajectory, t: float, family: int) -> np.ndarray:
    ts, ys, fs = trajectory.arrays
    if ts.size < 2:
        raise HorizonError("trajectory has a single time point; extend the horizon")
    out = np.empty(trajectory.m + 1)
    sig = trajectory.signal
    with np.errstate(all="ignore"):
        st, node = trajectory.kernels.tau_march(ts, ys, fs, ts.size, float(t), family, sig.times, sig.values, trajectory.p, out)
    if st == kn.HORIZON_SHORT:
        raise HorizonError(f"trajectory ends at t={ts[-1]:.6g} before the characteristic reaches node {node}; extend horizon")
    if st != kn.OK:
        raise IntegrationError(f"characteristic march failed: {kn.STATUS_TEXT[st]} at node {node}", st, t, node)
    return out


def tau_v(trajectory: Trajectory, t: float) -> np.ndarray:
    """``tau_v(t; x_i)`` at every node, marched from ``x = 1`` downwards."""
    return _march(trajectory, t, 1)


def tau_u(trajectory: Trajectory, t: float) -> np.ndarray:
    """``tau_u(t; x_i)`` at every node, marched from ``x = 0`` upwards."""
    return _march(trajectory, t, 0)


@dataclass
class CharCurve:
    """A characteristic line stored as breakpoints ``(s_j, xi_j)``.

    ``family`` is ``"u"`` (xi increasing in s) or ``"v"`` (xi decreasing).
    ``terminal`` is the point where the line leaves the traced domain.
    """

    s: np.ndarray
    xi: np.ndarray
    family: str
    terminal: tuple[float, float]

    def __post_init__(self) -> None:
        if self.family not in ("u", "v"):
            raise ValueError("family must be 'u' or 'v'")

    def is_monotone(self) -> bool:
        d = np.diff(self.xi) * np.sign(np.diff(self.s))
        return bool(np.all(d > 0) if self.family == "u" else np.all(d < 0))

    def position(self, s: float) -> float:
        order = np.argsort(self.s)
        return float(np.interp(s, self.s[order], self.xi[order]))

    @classmethod
    def from_tau(cls, x: np.ndarray, tau: np.ndarray, family: str) -> "CharCurve":
        order = np.argsort(tau)
        end = (float(x[order[-1]]), float(tau[order[-1]]))
        return cls(np.asarray(tau, dtype=float)[order], np.asarray(x, dtype=float)[order], family, end)


def _state_at(trajectory: Trajectory, x: float, t: float) -> tuple[float, float]:
    g = trajectory.state(t)
    return float(np.interp(x, g.x, g.u)), float(np.interp(x, g.x, g.v))


def trace_xi(trajectory: Trajectory, x0: float, t0: float, family: str, direction: int = 1, steps_per_cell: int = 4) -> CharCurve:
    """Trace ``d xi/ds = +lambda_u`` (u) or ``-lambda_v`` (v) through ``(x0, t0)``.

    Heun steps with the state interpolated linearly in x and by Hermite in t.
    The line is followed in time ``direction`` (+1 forward, -1 backward)
    until it reaches ``x = 0``, ``x = 1`` or the end of the trajectory;
    the exit point is stored in ``terminal``.
    """
    if family not in ("u", "v"):
        raise ValueError("family must be 'u' or 'v'")
    if not (0.0 <= x0 <= 1.0) or not (trajectory.t0 - 1e-12 <= t0 <= trajectory.t1 + 1e-12):
        raise ValueError("start point outside the trajectory domain")
    model = trajectory.model
    sign = 1.0 if family == "u" else -1.0

    def speed(x: float, t: float) -> float:
        u, v = _state_at(trajectory, x, t)
        lu, lv, _, _ = model.eval_coeffs(x, u, v)
        return sign * float(lu if family == "u" else lv)

    ds = direction / (steps_per_cell * trajectory.m)
    s_list = [t0]
    x_list = [x0]
    x, s = x0, t0
    t_lo, t_hi = trajectory.t0, trajectory.t1
    while True:
        a = speed(x, s)
        step = ds / max(abs(a), 1e-12)
        s_next = s + step
        if s_next > t_hi or s_next < t_lo:
            raise HorizonError("characteristic leaves the trajectory time span; extend horizon")
        x_pred = min(1.0, max(0.0, x + step * a))
        b = speed(x_pred, s_next)
        x_next = x + 0.5 * step * (a + b)
        if x_next <= 0.0 or x_next >= 1.0:
            edge = 0.0 if x_next <= 0.0 else 1.0
            frac = (edge - x) / (x_next - x)
            s_edge = s + frac * step
            s_list.append(s_edge)
            x_list.append(edge)
            return CharCurve(np.array(s_list), np.array(x_list), family, (edge, s_edge))
        x, s = x_next, s_next
        s_list.append(s)
        x_list.append(x)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


@dataclass
class PredictionBundle:
    """Predicted quantities on the curve ``(x, tau_v(t_k; x))``."""

    t_k: float
    tau_v: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_t: np.ndarray
    trajectory: Trajectory | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.tau_v.size - 1

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m + 1)

    @property
    def tau_k(self) -> float:
        return float(self.tau_v[0])

    @property
    def v0k(self) -> float:
        return float(self.v[0])

    def max_difference(self, other: "PredictionBundle") -> dict[str, float]:
        return {
            "tau_v": float(np.max(np.abs(self.tau_v - other.tau_v))),
            "u": float(np.max(np.abs(self.u - other.u))),
            "v": float(np.max(np.abs(self.v - other.v))),
            "u_t": float(np.max(np.abs(self.u_t - other.u_t))),
        }

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.x, self.tau_v, self.u, self.v, self.u_t])
        np.savetxt(path, data, delimiter=",", header="x,tau_v,u,v,u_t", comments="", fmt="%.12e")

    def curve(self) -> CharCurve:
        return CharCurve.from_tau(self.x, self.tau_v, "v")


def crossing_time_estimate(model: SystemModel, grid: StateGrid) -> float:
    """``int_0^1 1/lambda_v`` evaluated on the frozen state ``grid``."""
    _, lv, _, _ = model.eval_coeffs(grid.x, grid.u, grid.v, grid.t)
    return float(_trapezoid(1.0 / lv, grid.x))


def predict(
    model: SystemModel,
    W_k: StateGrid,
    t_k: float | None = None,
    m: int | None = None,
    tol: float = 1e-7,
    fill_in: Callable[[float], float] | ControlSignal | None = None,
    horizon: float | None = None,
    max_extensions: int = 40,
    mode: str | None = None,
    check: bool = True,
) -> PredictionBundle:
    """Predict the state on the input characteristic from the measurement ``W_k``.

    ``fill_in`` is the input used on the rectangle; by default the constant
    value compatible with ``W_k``.  Any other choice must be compatible at
    ``t_k``.  The horizon starts at ``1.2 * int 1/lambda_v`` of the frozen
    state (or ``horizon``) and is extended by half its length until the
    characteristic reaches ``x = 0``.
    """
    t_k = W_k.t if t_k is None else float(t_k)
    if m is not None and m != W_k.m:
        raise ValueError(f"measurement has m={W_k.m}, expected {m}")
    m = W_k.m
    grid = StateGrid(W_k.u, W_k.v, t_k)
    U_c = float(model.input_for_boundary(grid.v[-1], grid.u[-1], t_k))
    scale = max(1.0, grid.norm_inf())
    if check:
        r0 = abs(float(grid.u[0] - model.boundary_u(grid.v[0], t_k)))
        if r0 > 10 * tol * scale:
            raise ValueError(f"measurement violates u(0)=g_u(v(0)) by {r0:.3e}")
    if fill_in is None:
        signal = ControlSignal.constant(U_c, t_k)
    elif isinstance(fill_in, ControlSignal):
        signal = fill_in
    else:
        signal = None
    if signal is not None and check and abs(signal(t_k) - U_c) > 10 * tol * scale:
        raise ValueError("fill-in input is not compatible with the measurement at t_k")
    H = horizon if horizon is not None else 1.2 * crossing_time_estimate(model, grid)
    if signal is None:
        # sample a general callable densely on the horizon and extend lazily
        signal = _sample_signal(fill_in, t_k, t_k + H * (1 + 0.5 * max_extensions), m)
        if check and abs(signal(t_k) - U_c) > 10 * tol * scale:
            raise ValueError("fill-in input is not compatible with the measurement at t_k")
    integ = Integrator(model, m, tol, signal, t_k, grid.to_vector(), mode)
    step = 0.5 * H
    target = t_k + H
    for _ in range(max_extensions + 1):
        try:
            integ.advance(target)
        except IntegrationError as exc:
            raise PredictionError(f"prediction failed inside the determinate set: {exc}") from exc
        traj = integ.trajectory
        try:
            tau = tau_v(traj, t_k)
        except HorizonError:
            target += step
            continue
        except IntegrationError as exc:
            raise PredictionError(str(exc)) from exc
        break
    else:
        raise PredictionError("characteristic did not reach x=0 within the maximal prediction horizon")
    ts, ys, fs = traj.arrays
    u = np.empty(m + 1)
    v = np.empty(m + 1)
    ut = np.empty(m + 1)
    with np.errstate(all="ignore"):
        st, node = traj.kernels.curve_values(ts, ys, fs, ts.size, tau, signal.times, signal.values, traj.p, u, v, ut)
    if st != kn.OK:
        raise PredictionError(f"evaluating the prediction on the curve failed: {kn.STATUS_TEXT[st]} at node {node}")
    return PredictionBundle(t_k, tau, u, v, ut, traj)


def _sample_signal(fn: Callable[[float], float], t0: float, t1: float, m: int) -> ControlSignal:
    n = max(64, int(np.ceil((t1 - t0) * 20 * m)))
    ts = np.linspace(t0, t1, n + 1)
    return ControlSignal(ts, np.array([float(fn(t)) for t in ts]))


__all__ = [
    "CharCurve",
    "HorizonError",
    "PredictionBundle",
    "PredictionError",
    "crossing_time_estimate",
    "predict",
    "tau_u",
    "tau_v",
    "trace_xi",
]
