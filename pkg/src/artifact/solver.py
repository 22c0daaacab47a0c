"""Method-of-lines solver for the boundary-actuated system.

Space is discretised by first-order upwind differences on ``m`` cells.  The
``u`` equation uses the backward difference ``(u_i - u_{i-1})/h`` and the
``v`` equation the forward difference ``(v_{i+1} - v_i)/h``, so each
difference looks against the direction of transport.  Time stepping is an
adaptive Dormand-Prince 5(4) pair with dense output by cubic Hermite
interpolation between accepted steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels as kn
from .model import InitialData, SystemModel

CHUNK = 2048


class IntegrationError(RuntimeError):
    """Numerical failure while integrating; ``status`` is a kernel status code."""

    def __init__(self, message: str, status: int = kn.NON_FINITE, t: float = float("nan"), node: int = -1):
        self.status = status
        self.t = t
        self.node = node
        super().__init__(message)


class CompatibilityError(ValueError):
    """Initial data or input violate the boundary conditions at the start time."""


@dataclass
class StateGrid:
    """``(u, v)`` at the ``m + 1`` nodes ``x_i = i/m`` at one time."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=float).copy()
        self.v = np.asarray(self.v, dtype=float).copy()
        if self.u.shape != self.v.shape or self.u.ndim != 1 or self.u.size < 3:
            raise ValueError("u and v must be 1-D arrays of equal length >= 3")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("state grid contains non-finite values")

    @property
    def m(self) -> int:
        return self.u.size - 1

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m + 1)

    def norm_inf(self) -> float:
        return float(max(np.max(np.abs(self.u)), np.max(np.abs(self.v))))

    def to_vector(self) -> np.ndarray:
        """ODE state ``[u_1..u_m, v_0..v_{m-1}]``."""
        return np.concatenate([self.u[1:], self.v[:-1]])

    @classmethod
    def from_initial(cls, w0: InitialData, m: int, t: float = 0.0) -> "StateGrid":
        u, v = w0.sample(m)
        return cls(u, v, t)

    @classmethod
    def zeros(cls, m: int, t: float = 0.0) -> "StateGrid":
        return cls(np.zeros(m + 1), np.zeros(m + 1), t)

    def compatibility_residuals(self, model: SystemModel, U: float) -> tuple[float, float]:
        """``(|u(0) - g_u(v(0), t)|, |v(1) - boundary_v(u(1), U, t)|)``."""
        r0 = abs(float(self.u[0] - model.boundary_u(self.v[0], self.t)))
        r1 = abs(float(self.v[-1] - model.boundary_v(self.u[-1], U, self.t)))
        return r0, r1


class ControlSignal:
    """Continuous piecewise-linear input through breakpoints ``(t_j, U_j)``.

    Values outside the breakpoint range are held constant.
    """

    def __init__(self, times: Sequence[float], values: Sequence[float]):
        t = np.asarray(times, dtype=float).ravel()
        u = np.asarray(values, dtype=float).ravel()
        if t.size == 0 or t.size != u.size:
            raise ValueError("need matching, non-empty breakpoint arrays")
        if np.any(np.diff(t) < 0):
            raise ValueError("breakpoint times must be nondecreasing")
        if t.size == 1:
            t = np.array([t[0], t[0] + 1.0])
            u = np.array([u[0], u[0]])
        self.times = t
        self.values = u

    @classmethod
    def constant(cls, value: float, t0: float = 0.0) -> "ControlSignal":
        return cls([t0], [value])

    def __call__(self, t: float | np.ndarray) -> np.ndarray | float:
        out = np.interp(t, self.times, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def slope(self, t: float) -> float:
        """Right derivative at ``t``."""
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        if j < 0 or j >= self.times.size - 1:
            return 0.0
        dt = self.times[j + 1] - self.times[j]
        return 0.0 if dt <= 0 else float((self.values[j + 1] - self.values[j]) / dt)

    def lipschitz(self) -> float:
        dt = np.diff(self.times)
        keep = dt > 0
        if not np.any(keep):
            return 0.0
        return float(np.max(np.abs(np.diff(self.values)[keep] / dt[keep])))

    def splice(self, other: "ControlSignal", at: float) -> "ControlSignal":
        """This signal before ``at`` followed by ``other`` from ``at`` on."""
        keep = self.times < at
        return ControlSignal(
            np.concatenate([self.times[keep], other.times[other.times >= at]]),
            np.concatenate([self.values[keep], other.values[other.times >= at]]),
        )

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.times, self.values])
        np.savetxt(path, data, delimiter=",", header="t,U", comments="", fmt="%.12e")


class Trajectory:
    """Dense-output solution of one integration.

    The raw data are the accepted step times ``ts``, ODE states ``ys`` and
    their derivatives ``fs``.  :meth:`state` evaluates the full grid at any
    time in ``[t0, t1]`` with boundary nodes from the boundary maps.
    """

    def __init__(self, model: SystemModel, m: int, signal: ControlSignal, t0: float, y0: np.ndarray, f0: np.ndarray, mode: str | None = None):
        self.model = model
        self.m = int(m)
        self.signal = signal
        self.kernels = kn.get_kernels(model, mode)
        self.p = model.param_vector()
        self._chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = [
            (np.array([t0]), y0.reshape(1, -1).copy(), f0.reshape(1, -1).copy())
        ]
        self._flat: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None

    # raw access ---------------------------------------------------------

    def _append(self, ts: np.ndarray, ys: np.ndarray, fs: np.ndarray) -> None:
        if ts.size:
            self._chunks.append((ts, ys, fs))
            self._flat = None

    @property
    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._flat is None:
            ts = np.concatenate([c[0] for c in self._chunks])
            ys = np.concatenate([c[1] for c in self._chunks])
            fs = np.concatenate([c[2] for c in self._chunks])
            self._chunks = [(ts, ys, fs)]
            self._flat = (ts, ys, fs)
        return self._flat

    @property
    def times(self) -> np.ndarray:
        return self.arrays[0]

    @property
    def t0(self) -> float:
        return float(self._chunks[0][0][0])

    @property
    def t1(self) -> float:
        return float(self._chunks[-1][0][-1])

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m + 1)

    # evaluation ---------------------------------------------------------

    def _vector(self, t: float) -> np.ndarray:
        ts, ys, fs = self.arrays
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside trajectory span [{ts[0]}, {ts[-1]}]")
        if ts.size == 1:
            return ys[0].copy()
        j = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, ts.size - 2))
        h = ts[j + 1] - ts[j]
        s = (t - ts[j]) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * ys[j] + h10 * h * fs[j] + h01 * ys[j + 1] + h11 * h * fs[j + 1]

    def state(self, t: float) -> StateGrid:
        y = self._vector(float(t))
        u = np.empty(self.m + 1)
        v = np.empty(self.m + 1)
        sig = self.signal
        self.kernels.reconstruct(float(t), y, sig.times, sig.values, self.p, u, v)
        return StateGrid(u, v, float(t))

    def sample(self, times: Iterable[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Arrays ``(t, u, v)`` with ``u, v`` of shape ``(len(t), m+1)``."""
        tq = np.asarray(list(times), dtype=float)
        us = np.empty((tq.size, self.m + 1))
        vs = np.empty((tq.size, self.m + 1))
        for k, t in enumerate(tq):
            g = self.state(t)
            us[k] = g.u
            vs[k] = g.v
        return tq, us, vs

    def grids(self, times: Iterable[float]) -> list[StateGrid]:
        return [self.state(t) for t in times]

    def norm_inf(self, times: Iterable[float]) -> np.ndarray:
        _, us, vs = self.sample(times)
        return np.maximum(np.max(np.abs(us), axis=1), np.max(np.abs(vs), axis=1))

    def boundary_trace(self, times: Iterable[float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(t, v(0, t), input U(t))``."""
        tq, _, vs = self.sample(times)
        return tq, vs[:, 0], np.asarray(self.signal(tq), dtype=float)

    def default_times(self, dt: float | None = None) -> np.ndarray:
        if dt is None:
            return self.times.copy()
        n = int(np.floor((self.t1 - self.t0) / dt + 1e-9))
        return self.t0 + dt * np.arange(n + 1)

    def to_csv(self, path: str | Path, times: Iterable[float] | None = None) -> None:
        """Write ``t,x,u,v`` rows, one per node per sample time."""
        tq, us, vs = self.sample(self.default_times() if times is None else times)
        x = self.x
        rows = np.column_stack(
            [np.repeat(tq, self.m + 1), np.tile(x, tq.size), us.ravel(), vs.ravel()]
        )
        np.savetxt(path, rows, delimiter=",", header="t,x,u,v", comments="", fmt="%.12e")


@dataclass
class Integrator:
    """Incremental integrator; :meth:`advance` may be called with new inputs."""

    model: SystemModel
    m: int
    tol: float
    signal: ControlSignal
    t: float
    y: np.ndarray
    mode: str | None = None
    trajectory: Trajectory = field(init=False)
    dt: float = field(init=False)

    def __post_init__(self) -> None:
        self.kernels = kn.get_kernels(self.model, self.mode)
        self.p = self.model.param_vector()
        self.y = np.asarray(self.y, dtype=float).copy()
        self.f = self._derivative(self.t, self.y)
        self.trajectory = Trajectory(self.model, self.m, self.signal, self.t, self.y, self.f, self.mode)
        self.dt = 0.5 / self.m

    def _derivative(self, t: float, y: np.ndarray) -> np.ndarray:
        f = np.empty_like(y)
        sig = self.signal
        with np.errstate(all="ignore"):
            st, bad = self.kernels.rhs(t, y, sig.times, sig.values, self.p, f)
        if st != kn.OK:
            raise IntegrationError(f"{kn.STATUS_TEXT[st]} at node {bad}, t={t:.6g}", st, t, bad)
        return f

    def set_signal(self, signal: ControlSignal, splice_at: float | None = None) -> None:
        """Switch inputs; the trajectory keeps the old input before ``splice_at``."""
        at = self.t if splice_at is None else splice_at
        self.signal = signal
        self.trajectory.signal = self.trajectory.signal.splice(signal, at)
        self.f = self._derivative(self.t, self.y)

    def advance(self, t_end: float) -> Trajectory:
        sig = self.signal
        while self.t < t_end:
            ts = np.empty(CHUNK)
            ys = np.empty((CHUNK, self.y.size))
            fs = np.empty((CHUNK, self.y.size))
            with np.errstate(all="ignore"):
                st, n, t, dt, bad = self.kernels.dp5(
                    self.t, self.y, self.f, self.dt, float(t_end), self.tol, sig.times, sig.values, self.p, ts, ys, fs, 0
                )
            self.trajectory._append(ts[:n], ys[:n], fs[:n])
            self.t = float(t)
            self.dt = float(dt)
            if st == kn.OK:
                break
            if st != kn.BUFFER_FULL:
                where = f" at node {bad}" if bad >= 0 else ""
                raise IntegrationError(f"integration failed: {kn.STATUS_TEXT[st]}{where}, t={self.t:.6g}", st, self.t, bad)
        return self.trajectory


def _initial_vector(w0: InitialData | StateGrid, m: int, t0: float) -> StateGrid:
    if isinstance(w0, StateGrid):
        if w0.m != m:
            raise ValueError(f"initial grid has m={w0.m}, expected {m}")
        return w0
    return StateGrid.from_initial(w0, m, t0)


def integrate(
    model: SystemModel,
    w0: InitialData | StateGrid,
    U: ControlSignal | float,
    span: tuple[float, float],
    m: int = 100,
    tol: float = 1e-7,
    check_compatibility: bool = True,
    mode: str | None = None,
) -> Trajectory:
    """Integrate on ``span`` with input ``U`` and return the dense trajectory."""
    t0, t1 = float(span[0]), float(span[1])
    if not t1 >= t0:
        raise ValueError("span must be increasing")
    if m < 2:
        raise ValueError("need at least 2 cells")
    signal = U if isinstance(U, ControlSignal) else ControlSignal.constant(float(U), t0)
    grid = _initial_vector(w0, m, t0)
    grid = StateGrid(grid.u, grid.v, t0)
    if check_compatibility:
        r0, r1 = grid.compatibility_residuals(model, signal(t0))
        scale = max(1.0, grid.norm_inf())
        if r0 > tol * scale or r1 > tol * scale:
            raise CompatibilityError(
                f"initial data incompatible with boundary conditions: |u(0)-g_u|={r0:.3e}, |v(1)-U|={r1:.3e}"
            )
    integ = Integrator(model, m, tol, signal, t0, grid.to_vector(), mode)
    return integ.advance(t1)


def rhs(model: SystemModel, grid: StateGrid, U_t_value: float = 0.0, t: float | None = None, U: float | None = None, mode: str | None = None) -> StateGrid:
    """Semi-discrete time derivative at every node.

    Interior nodes follow the upwind scheme.  The boundary nodes follow the
    boundary maps: ``u_t(0) = d_v g_u * v_t(0) + d_t g_u`` and
    ``v_t(1) = s_U * U_t + d_u g_v * u_t(1)`` (``g_v`` is time-independent
    in the supported models, so no explicit ``d_t g_v`` term).
    ``U`` defaults to the value implied by ``v(1)``.
    """
    t = grid.t if t is None else float(t)
    m = grid.m
    ks = kn.get_kernels(model, mode)
    p = model.param_vector()
    if U is None:
        U = float(model.input_for_boundary(grid.v[-1], grid.u[-1], t))
    y = grid.to_vector()
    dy = np.empty_like(y)
    tb = np.array([t, t + 1.0])
    Ub = np.array([U, U])
    with np.errstate(all="ignore"):
        st, bad = ks.rhs(t, y, tb, Ub, p, dy)
    if st != kn.OK:
        raise IntegrationError(f"{kn.STATUS_TEXT[st]} at node {bad}", st, t, bad)
    ut = np.empty(m + 1)
    vt = np.empty(m + 1)
    ut[1:] = dy[:m]
    vt[:m] = dy[m:]
    _, gu_v, gu_t = (float(a) for a in ks.bnd_u(float(grid.v[0]), t, p))
    ut[0] = gu_v * vt[0] + gu_t
    _, gv_u = (float(a) for a in ks.bnd_v(float(grid.u[-1]), float(U), t, p))
    vt[m] = p[6] * U_t_value + gv_u * ut[m]
    return StateGrid(ut, vt, t)


def time_derivative_field(model: SystemModel, grid: StateGrid, t: float | None = None, U_t_value: float = 0.0, mode: str | None = None) -> StateGrid:
    """``w_t`` on the grid; identical to :func:`rhs`, kept as a separate entry point."""
    return rhs(model, grid, U_t_value, t, mode=mode)


def transport_solution(u0, v0, t: float, x: np.ndarray, lam_u: float = 1.0, lam_v: float = 1.0, U=lambda t: 0.0, g=lambda v: v):
    """Exact solution of constant-speed transport with ``F = 0``.

    ``u(0,t) = g(v(0,t))`` and ``v(1,t) = U(t)``; used as a test oracle.
    """

    def v_at(xx, tt):
        # v is constant along x + lam_v t = const
        xs = xx + lam_v * tt
        if xs <= 1.0:
            return v0(xs)
        return U(tt - (1.0 - xx) / lam_v)

    def u_at(xx, tt):
        xs = xx - lam_u * tt
        if xs >= 0.0:
            return u0(xs)
        t_enter = tt - xx / lam_u
        return g(v_at(0.0, t_enter))

    x = np.asarray(x, dtype=float)
    return np.array([u_at(a, t) for a in x]), np.array([v_at(a, t) for a in x])


__all__ = [
    "CompatibilityError",
    "ControlSignal",
    "IntegrationError",
    "Integrator",
    "StateGrid",
    "Trajectory",
    "integrate",
    "rhs",
    "time_derivative_field",
    "transport_solution",
]
