"""Compiled inner loops shared by the solver, predictor and controller.

Each :class:`~artifact.model.SystemModel` is turned into a :class:`KernelSet`.
For symbolic models the coefficient expressions are emitted as Python source
and, when numba is available, compiled with ``numba.njit``.  Setting the
environment variable ``ARTIFACT_NO_NUMBA=1`` (or passing ``mode="numpy"``)
selects a pure numpy path that runs the same algorithms without compilation.
Models with Python-callable coefficients always use the numpy path.

Layout conventions
------------------
Nodes are ``x_i = i/m``.  The ODE state is ``y = [u_1..u_m, v_0..v_{m-1}]``;
the boundary nodes ``u_0`` and ``v_m`` are recomputed from the boundary maps
whenever the state is used, so the discrete boundary conditions hold exactly.
The input is a piecewise-linear signal given by breakpoints ``(tb, Ub)``.
The parameter vector ``p`` holds the :class:`~artifact.model.ModelFactors`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import SystemModel

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

OK = 0
BUFFER_FULL = 1
STEP_UNDERFLOW = 2
NON_FINITE = 3
NOT_HYPERBOLIC = 4
HORIZON_SHORT = 5
BAD_TIME_SCALE = 6

STATUS_TEXT = {
    OK: "ok",
    BUFFER_FULL: "buffer full",
    STEP_UNDERFLOW: "step size underflow",
    NON_FINITE: "non-finite state",
    NOT_HYPERBOLIC: "transport speed not positive",
    HORIZON_SHORT: "trajectory horizon too short",
    BAD_TIME_SCALE: "characteristic time derivative not positive",
}


def numba_disabled() -> bool:
    return os.environ.get("ARTIFACT_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


def default_mode() -> str:
    return "numpy" if (numba_disabled() or not HAVE_NUMBA) else "numba"


# ---------------------------------------------------------------------------
# point functions
# ---------------------------------------------------------------------------

_POINT_TEMPLATE = """
def coef(x, u, v, t, p):
    return (p[0] * {lu}, p[1] * {lv}, p[2] * {fu}, p[3] * {fv})

def dcoef(x, u, v, t, p):
    return (p[0] * {lu_u}, p[0] * {lu_v}, p[1] * {lv_u}, p[1] * {lv_v},
            p[2] * {fu_u}, p[2] * {fu_v}, p[3] * {fv_u}, p[3] * {fv_v})

def bnd_u(v, t, p):
    return (p[4] * {gu}, p[4] * {gu_v}, p[4] * {gu_t})

def bnd_v(u, U, t, p):
    return (p[6] * U + {gv} + p[5] * u, {gv_u} + p[5])
"""


def point_source(model: SystemModel) -> str:
    """Source text of the four point functions of a symbolic model."""
    parts = {}
    for key, coeff in (("lu", model.lambda_u), ("lv", model.lambda_v), ("fu", model.f_u), ("fv", model.f_v)):
        parts[key] = f"({coeff.source()})"
        for var in ("u", "v"):
            parts[f"{key}_{var}"] = f"({coeff.derivative(var).source()})"
    parts["gu"] = f"({model.g_u.source()})"
    parts["gu_v"] = f"({model.g_u.derivative('v').source()})"
    parts["gu_t"] = f"({model.g_u.derivative('t').source()})"
    parts["gv"] = f"({model.g_v.source()})"
    parts["gv_u"] = f"({model.g_v.derivative('u').source()})"
    return _POINT_TEMPLATE.format(**parts)


def _callable_points(model: SystemModel) -> dict[str, Callable]:
    """Point functions for models with callable coefficients (numpy mode only)."""
    base = model.nominal()
    lu, lv, fu, fv = base.lambda_u, base.lambda_v, base.f_u, base.f_v
    d = {f"{n}_{var}": c.derivative(var) for n, c in (("lu", lu), ("lv", lv), ("fu", fu), ("fv", fv)) for var in ("u", "v")}
    gu, gv = base.g_u, base.g_v
    gu_v, gu_t, gv_u = gu.derivative("v"), gu.derivative("t"), gv.derivative("u")

    def coef(x, u, v, t, p):
        return (p[0] * lu(x, u, v, t), p[1] * lv(x, u, v, t), p[2] * fu(x, u, v, t), p[3] * fv(x, u, v, t))

    def dcoef(x, u, v, t, p):
        return (
            p[0] * d["lu_u"](x, u, v, t), p[0] * d["lu_v"](x, u, v, t),
            p[1] * d["lv_u"](x, u, v, t), p[1] * d["lv_v"](x, u, v, t),
            p[2] * d["fu_u"](x, u, v, t), p[2] * d["fu_v"](x, u, v, t),
            p[3] * d["fv_u"](x, u, v, t), p[3] * d["fv_v"](x, u, v, t),
        )

    def bnd_u(v, t, p):
        return (p[4] * gu(0.0, 0.0, v, t), p[4] * gu_v(0.0, 0.0, v, t), p[4] * gu_t(0.0, 0.0, v, t))

    def bnd_v(u, U, t, p):
        return (p[6] * U + gv(0.0, u, 0.0, t) + p[5] * u, gv_u(0.0, u, 0.0, t) + p[5])

    return {"coef": coef, "dcoef": dcoef, "bnd_u": bnd_u, "bnd_v": bnd_v}


def _identity(fn):
    return fn


# ---------------------------------------------------------------------------
# kernel factory
# ---------------------------------------------------------------------------


def _factory(coef, dcoef, bnd_u, bnd_v, jit, vectorized: bool):
    """Build every kernel around the given point functions.

    ``jit`` is either ``numba.njit(...)`` or the identity.  With
    ``vectorized`` the right-hand side uses array expressions instead of a
    node loop (faster without compilation).
    """

    # -- helpers -------------------------------------------------------

    @jit
    def input_value(t, tb, Ub):
        return np.interp(t, tb, Ub)

    @jit
    def pl_value(s, sb, Sb):
        return np.interp(s, sb, Sb)

    @jit
    def pl_slope(s, sb, Sb):
        # right derivative of the piecewise-linear function (zero outside)
        nb = sb.shape[0]
        j = np.searchsorted(sb, s, side="right") - 1
        if j < 0 or j >= nb - 1:
            return 0.0
        return (Sb[j + 1] - Sb[j]) / (sb[j + 1] - sb[j])

    @jit
    def boundary_nodes(t, y, tb, Ub, p):
        m = y.shape[0] // 2
        U = input_value(t, tb, Ub)
        u0 = bnd_u(y[m], t, p)[0]
        vm = bnd_v(y[m - 1], U, t, p)[0]
        return u0, vm

    @jit
    def reconstruct(t, y, tb, Ub, p, u, v):
        m = y.shape[0] // 2
        u0, vm = boundary_nodes(t, y, tb, Ub, p)
        u[0] = u0
        u[1:] = y[:m]
        v[:m] = y[m:]
        v[m] = vm

    # -- right-hand side ----------------------------------------------

    if vectorized:

        def rhs(t, y, tb, Ub, p, dy):
            m = y.shape[0] // 2
            h = 1.0 / m
            u = np.empty(m + 1)
            v = np.empty(m + 1)
            reconstruct(t, y, tb, Ub, p, u, v)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                return NON_FINITE, int(np.argmax(~(np.isfinite(u) & np.isfinite(v))))
            x = np.linspace(0.0, 1.0, m + 1)
            with np.errstate(all="ignore"):
                lu, lv, fu, fv = coef(x, u, v, t, p)
                lu = lu + np.zeros(m + 1)
                lv = lv + np.zeros(m + 1)
                fu = fu + np.zeros(m + 1)
                fv = fv + np.zeros(m + 1)
            bad = ~((lu > 0.0) & (lv > 0.0))
            if np.any(bad):
                return NOT_HYPERBOLIC, int(np.argmax(bad))
            dy[:m] = -lu[1:] * (u[1:] - u[:-1]) / h + fu[1:]
            dy[m:] = lv[:-1] * (v[1:] - v[:-1]) / h + fv[:-1]
            if not np.all(np.isfinite(dy)):
                return NON_FINITE, int(np.argmax(~np.isfinite(dy)))
            return OK, -1

    else:

        @jit
        def rhs(t, y, tb, Ub, p, dy):
            m = y.shape[0] // 2
            h = 1.0 / m
            u0, vm = boundary_nodes(t, y, tb, Ub, p)
            if not (math.isfinite(u0) and math.isfinite(vm)):
                return NON_FINITE, 0
            # u at nodes 1..m, backward difference
            uprev = u0
            for i in range(1, m + 1):
                ui = y[i - 1]
                vi = y[m + i] if i < m else vm
                lu, lv, fu, fv = coef(i * h, ui, vi, t, p)
                if not (lu > 0.0 and lv > 0.0):
                    return NOT_HYPERBOLIC, i
                dy[i - 1] = -lu * (ui - uprev) / h + fu
                uprev = ui
            # v at nodes 0..m-1, forward difference
            for i in range(m):
                ui = y[i - 1] if i > 0 else u0
                vi = y[m + i]
                vnext = y[m + i + 1] if i + 1 < m else vm
                lu, lv, fu, fv = coef(i * h, ui, vi, t, p)
                if not (lu > 0.0 and lv > 0.0):
                    return NOT_HYPERBOLIC, i
                dy[m + i] = lv * (vnext - vi) / h + fv
            for i in range(2 * m):
                if not math.isfinite(dy[i]):
                    return NON_FINITE, i
            return OK, -1

    # -- Dormand-Prince 5(4) driver -------------------------------------

    @jit
    def dp5(t, y, f, dt, t_end, tol, tb, Ub, p, ts, ys, fs, n0):
        """Advance from ``t`` towards ``t_end`` storing accepted steps from slot ``n0``.

        ``y`` and ``f`` (the derivative at ``t``) are updated in place.
        Returns ``(status, n, t, dt, bad_index)``.
        """
        N = y.shape[0]
        cap = ts.shape[0]
        k2 = np.empty(N)
        k3 = np.empty(N)
        k4 = np.empty(N)
        k5 = np.empty(N)
        k6 = np.empty(N)
        k7 = np.empty(N)
        n = n0
        last_bad = -1
        last_status = OK
        while t < t_end:
            if n >= cap:
                return BUFFER_FULL, n, t, dt, -1
            remaining = t_end - t
            if remaining <= 1e-14 * max(1.0, abs(t_end)):
                t = t_end
                break
            step = min(dt, remaining)
            if step < 1e-12 * max(1.0, abs(t)):
                return (last_status if last_status != OK else STEP_UNDERFLOW), n, t, dt, last_bad
            st, bad = rhs(t + 0.2 * step, y + step * (0.2 * f), tb, Ub, p, k2)
            if st == OK:
                st, bad = rhs(t + 0.3 * step, y + step * (3.0 / 40.0 * f + 9.0 / 40.0 * k2), tb, Ub, p, k3)
            if st == OK:
                yt = y + step * (44.0 / 45.0 * f - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3)
                st, bad = rhs(t + 0.8 * step, yt, tb, Ub, p, k4)
            if st == OK:
                yt = y + step * (
                    19372.0 / 6561.0 * f - 25360.0 / 2187.0 * k2 + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4
                )
                st, bad = rhs(t + 8.0 / 9.0 * step, yt, tb, Ub, p, k5)
            if st == OK:
                yt = y + step * (
                    9017.0 / 3168.0 * f - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4
                    - 5103.0 / 18656.0 * k5
                )
                st, bad = rhs(t + step, yt, tb, Ub, p, k6)
            yn = y + step * (
                35.0 / 384.0 * f + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5 + 11.0 / 84.0 * k6
            )
            if st == OK:
                st, bad = rhs(t + step, yn, tb, Ub, p, k7)
            if st != OK:
                last_status = st
                last_bad = bad
                dt = 0.2 * step
                continue
            e = step * (
                71.0 / 57600.0 * f - 71.0 / 16695.0 * k3 + 71.0 / 1920.0 * k4 - 17253.0 / 339200.0 * k5
                + 22.0 / 525.0 * k6 - 1.0 / 40.0 * k7
            )
            err = np.max(np.abs(e) / (tol + tol * np.maximum(np.abs(y), np.abs(yn))))
            if not math.isfinite(err):
                last_status = NON_FINITE
                dt = 0.2 * step
                continue
            if err <= 1.0:
                t = t + step if step < remaining else t_end
                y[:] = yn
                f[:] = k7
                ts[n] = t
                ys[n, :] = y
                fs[n, :] = f
                n += 1
                last_status = OK
                last_bad = -1
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                dt = step * fac
            else:
                dt = step * max(0.2, 0.9 * err ** -0.2)
        return OK, n, t, dt, -1

    # -- dense output -------------------------------------------------

    @jit
    def locate(ts, n, tq):
        j = np.searchsorted(ts[:n], tq, side="right") - 1
        if j < 0:
            j = 0
        if j > n - 2:
            j = n - 2
        return j

    @jit
    def herm(ts, ys, fs, j, c, tq):
        t0 = ts[j]
        hh = ts[j + 1] - t0
        s = (tq - t0) / hh
        s1 = 1.0 - s
        h00 = (1.0 + 2.0 * s) * s1 * s1
        h10 = s * s1 * s1
        h01 = s * s * (3.0 - 2.0 * s)
        h11 = s * s * (s - 1.0)
        return h00 * ys[j, c] + h10 * hh * fs[j, c] + h01 * ys[j + 1, c] + h11 * hh * fs[j + 1, c]

    @jit
    def herm_d(ts, ys, fs, j, c, tq):
        t0 = ts[j]
        hh = ts[j + 1] - t0
        s = (tq - t0) / hh
        d00 = 6.0 * s * (s - 1.0) / hh
        d10 = (1.0 - s) * (1.0 - 3.0 * s)
        d01 = -d00
        d11 = s * (3.0 * s - 2.0)
        return d00 * ys[j, c] + d10 * fs[j, c] + d01 * ys[j + 1, c] + d11 * fs[j + 1, c]

    @jit
    def node_state(ts, ys, fs, n, i, tq, tb, Ub, p):
        """``(u_i, v_i)`` at time ``tq`` by Hermite interpolation plus boundary maps."""
        m = ys.shape[1] // 2
        j = locate(ts, n, tq)
        if i == 0:
            v = herm(ts, ys, fs, j, m, tq)
            u = bnd_u(v, tq, p)[0]
        elif i == m:
            u = herm(ts, ys, fs, j, m - 1, tq)
            v = bnd_v(u, input_value(tq, tb, Ub), tq, p)[0]
        else:
            u = herm(ts, ys, fs, j, i - 1, tq)
            v = herm(ts, ys, fs, j, m + i, tq)
        return u, v

    @jit
    def tau_march(ts, ys, fs, n, t_start, family, tb, Ub, p, out):
        """Characteristic times at every node for the line through ``x=1`` (v) or ``x=0`` (u).

        Trapezoidal quadrature of ``1/lambda`` with three fixed-point sweeps
        per cell.  Returns ``(status, node)``.
        """
        m = ys.shape[1] // 2
        h = 1.0 / m
        t_last = ts[n - 1]
        if family == 1:
            start, stop, step = m, -1, -1
        else:
            start, stop, step = 0, m + 1, 1
        out[start] = t_start
        u, v = node_state(ts, ys, fs, n, start, t_start, tb, Ub, p)
        lu, lv, fu, fv = coef(start * h, u, v, 0.0, p)
        lam_prev = lv if family == 1 else lu
        if not (lam_prev > 0.0):
            return NOT_HYPERBOLIC, start
        i = start + step
        while i != stop:
            guess = out[i - step] + h / lam_prev
            for _ in range(4):
                if guess > t_last:
                    return HORIZON_SHORT, i
                u, v = node_state(ts, ys, fs, n, i, guess, tb, Ub, p)
                lu, lv, fu, fv = coef(i * h, u, v, 0.0, p)
                lam = lv if family == 1 else lu
                if not (lam > 0.0):
                    return NOT_HYPERBOLIC, i
                guess = out[i - step] + 0.5 * h * (1.0 / lam_prev + 1.0 / lam)
            if not math.isfinite(guess):
                return NON_FINITE, i
            out[i] = guess
            u, v = node_state(ts, ys, fs, n, i, guess, tb, Ub, p)
            lu, lv, fu, fv = coef(i * h, u, v, 0.0, p)
            lam_prev = lv if family == 1 else lu
            i += step
        return OK, -1

    @jit
    def curve_values(ts, ys, fs, n, tau, tb, Ub, p, uo, vo, uto):
        """State and ``u_t`` on the curve ``(x_i, tau_i)``; ``u_t`` from the upwind residual."""
        m = ys.shape[1] // 2
        h = 1.0 / m
        for i in range(m + 1):
            if tau[i] > ts[n - 1] or tau[i] < ts[0]:
                return HORIZON_SHORT, i
            u, v = node_state(ts, ys, fs, n, i, tau[i], tb, Ub, p)
            uo[i] = u
            vo[i] = v
            if i == 0:
                u1, v1 = node_state(ts, ys, fs, n, 1, tau[0], tb, Ub, p)
                lu, lv, fu, fv = coef(0.0, u, v, 0.0, p)
                vt = lv * (v1 - v) / h + fv
                g, g_v, g_t = bnd_u(v, tau[0], p)
                uto[0] = g_v * vt + g_t
            else:
                um, vm_ = node_state(ts, ys, fs, n, i - 1, tau[i], tb, Ub, p)
                lu, lv, fu, fv = coef(i * h, u, v, 0.0, p)
                uto[i] = -lu * (u - um) / h + fu
            if not (math.isfinite(uo[i]) and math.isfinite(vo[i]) and math.isfinite(uto[i])):
                return NON_FINITE, i
        return OK, -1

    # -- x-direction ODEs along the input characteristic ----------------

    @jit
    def xode_rates(x, u, v, qu, qv, p):
        lu, lv, fu, fv = coef(x, u, v, 0.0, p)
        lu_u, lu_v, lv_u, lv_v, fu_u, fu_v, fv_u, fv_v = dcoef(x, u, v, 0.0, p)
        c5 = lv_u / lv
        c6 = lv_v / lv
        c7 = fv_u - c5 * fv
        c8 = fv_v - c6 * fv
        dv = -fv / lv
        dq = -(c5 * qu * qv + c6 * qv * qv + c7 * qu + c8 * qv) / lv
        return dv, dq

    @jit
    def xode_increment(x0, x1, u0, u1, v0, qu0, qu1, qv0, p):
        h = x1 - x0
        a_v, a_q = xode_rates(x0, u0, v0, qu0, qv0, p)
        b_v, b_q = xode_rates(x1, u1, v0 + h * a_v, qu1, qv0 + h * a_q, p)
        return 0.5 * h * (a_v + b_v), 0.5 * h * (a_q + b_q)

    @jit
    def xode_march(u, qu, v0, qv0, dd, p, vo, qvo):
        """Heun march of ``v`` and ``v_t`` from ``x=0`` with per-cell offsets ``dd``."""
        m = u.shape[0] - 1
        h = 1.0 / m
        vo[0] = v0
        qvo[0] = qv0
        for i in range(m):
            dv, dq = xode_increment(i * h, (i + 1) * h, u[i], u[i + 1], vo[i], qu[i], qu[i + 1], qvo[i], p)
            vo[i + 1] = vo[i] + dv + dd[i]
            qvo[i + 1] = qvo[i] + dq
            if not (math.isfinite(vo[i + 1]) and math.isfinite(qvo[i + 1])):
                return NON_FINITE, i + 1
        return OK, -1

    @jit
    def xode_defect(u, v, p, dd):
        """Per-cell difference between the given ``v`` profile and one Heun step."""
        m = u.shape[0] - 1
        h = 1.0 / m
        for i in range(m):
            dv, dq = xode_increment(i * h, (i + 1) * h, u[i], u[i + 1], v[i], 0.0, 0.0, 0.0, p)
            dd[i] = (v[i + 1] - v[i]) - dv

    # -- target dynamics -------------------------------------------------

    @jit
    def target_solve(t0, t1, tau, ub, utb, dd, sb, Sb, p, cfl, chain, rows_t, rows, Uo):
        """Explicit solve of the target system on ``[t0, t1]``.

        Row fields: u*, v*, u*_t, v*_t, d_t tau, nu, mu, tau.
        With ``chain`` set, d_t tau solves J' = a J (the integrand carries
        the factor d_t tau itself); otherwise the first-order form
        J = 1 - int a is used.  Returns ``(status, rows_used, node)``.
        """
        m = ub.shape[0] - 1
        h = 1.0 / m
        cap = rows_t.shape[0]
        us = ub.copy()
        qu = utb.copy()
        tt = tau.copy()
        vs = np.empty(m + 1)
        qv = np.empty(m + 1)
        dtau = np.empty(m + 1)
        nu = np.empty(m + 1)
        mu = np.empty(m + 1)
        quo = np.empty(m + 1)
        t = t0
        r = 0
        while True:
            s0 = tt[0]
            v0 = pl_value(s0, sb, Sb)
            qv0 = pl_slope(s0, sb, Sb)
            g, g_v, g_t = bnd_u(v0, s0, p)
            us[0] = g
            qu[0] = g_v * qv0 + g_t
            st, bad = xode_march(us, qu, v0, qv0, dd, p, vs, qv)
            if st != OK:
                return st, r, bad
            # d_t tau by trapezoid from x = 1 downwards
            dtau[m] = 1.0
            prev = 0.0
            for i in range(m, -1, -1):
                lu, lv, fu, fv = coef(i * h, us[i], vs[i], 0.0, p)
                if not (lu > 0.0 and lv > 0.0):
                    return NOT_HYPERBOLIC, r, i
                lu_u, lu_v, lv_u, lv_v, fu_u, fu_v, fv_u, fv_v = dcoef(i * h, us[i], vs[i], 0.0, p)
                integrand = (lv_u * qu[i] + lv_v * qv[i]) / (lv * lv)
                if i < m:
                    if chain:
                        dtau[i] = dtau[i + 1] * (1.0 - 0.5 * h * prev) / (1.0 + 0.5 * h * integrand)
                    else:
                        dtau[i] = dtau[i + 1] - 0.5 * h * (integrand + prev)
                prev = integrand
                nu[i] = dtau[i] * lv / (lu + lv)
                mu[i] = nu[i] * lu
            mu_max = 0.0
            for i in range(m + 1):
                if not (dtau[i] > 0.0) or not math.isfinite(dtau[i]):
                    return BAD_TIME_SCALE, r, i
                if mu[i] > mu_max:
                    mu_max = mu[i]
            if r >= cap:
                return BUFFER_FULL, r, -1
            rows_t[r] = t
            rows[r, 0, :] = us
            rows[r, 1, :] = vs
            rows[r, 2, :] = qu
            rows[r, 3, :] = qv
            rows[r, 4, :] = dtau
            rows[r, 5, :] = nu
            rows[r, 6, :] = mu
            rows[r, 7, :] = tt
            gvv, gv_u = bnd_v(us[m], 0.0, t, p)
            Uo[r] = (vs[m] - gvv) / p[6]
            r += 1
            remaining = t1 - t
            if remaining <= 1e-13 * max(1.0, abs(t1)):
                break
            dt = remaining
            if mu_max > 0.0:
                dt = min(dt, cfl * h / mu_max)
            # explicit Euler update
            for i in range(m + 1):
                quo[i] = qu[i]
            for i in range(1, m + 1):
                lu, lv, fu, fv = coef(i * h, us[i], vs[i], 0.0, p)
                lu_u, lu_v, lv_u, lv_v, fu_u, fu_v, fv_u, fv_v = dcoef(i * h, us[i], vs[i], 0.0, p)
                c1 = lu_u / lu
                c2 = lu_v / lu
                c3 = fu_u - c1 * fu
                c4 = fu_v - c2 * fu
                q = quo[i]
                src = c1 * q * q + c2 * q * qv[i] + c3 * q + c4 * qv[i]
                us[i] = us[i] + dt * dtau[i] * q
                qu[i] = q + dt * (-mu[i] * (q - quo[i - 1]) / h + nu[i] * src)
                if not (math.isfinite(us[i]) and math.isfinite(qu[i])):
                    return NON_FINITE, r, i
            for i in range(m + 1):
                tt[i] = tt[i] + dt * dtau[i]
            t = t + dt if dt < remaining else t1
        return OK, r, -1

    return {
        "input_value": input_value,
        "pl_value": pl_value,
        "pl_slope": pl_slope,
        "boundary_nodes": boundary_nodes,
        "reconstruct": reconstruct,
        "rhs": rhs,
        "dp5": dp5,
        "locate": locate,
        "herm": herm,
        "herm_d": herm_d,
        "node_state": node_state,
        "tau_march": tau_march,
        "curve_values": curve_values,
        "xode_rates": xode_rates,
        "xode_march": xode_march,
        "xode_defect": xode_defect,
        "target_solve": target_solve,
    }


@dataclass
class KernelSet:
    """Kernels specialised to one model structure."""

    mode: str
    coef: Callable
    dcoef: Callable
    bnd_u: Callable
    bnd_v: Callable
    fn: dict

    def __getattr__(self, name: str):
        try:
            return self.__dict__["fn"][name]
        except KeyError:
            raise AttributeError(name) from None


_CACHE: dict[tuple, KernelSet] = {}


def _compile_points(source: str, jit) -> dict[str, Callable]:
    namespace: dict[str, object] = {"np": np}
    exec(compile(source, "<artifact-model>", "exec"), namespace)
    return {name: jit(namespace[name]) for name in ("coef", "dcoef", "bnd_u", "bnd_v")}


def get_kernels(model: SystemModel, mode: str | None = None) -> KernelSet:
    """Return (and cache) the kernel set for ``model``.

    ``mode`` is ``"numba"`` or ``"numpy"``; by default numba unless
    ``ARTIFACT_NO_NUMBA`` is set.  Callable models always get ``"numpy"``.
    """
    mode = mode or default_mode()
    if mode not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel mode {mode!r}")
    if mode == "numba" and not HAVE_NUMBA:
        mode = "numpy"
    if not model.is_symbolic:
        mode = "numpy"
    key = (model.structure_key(), mode)
    hit = _CACHE.get(key)
    if hit is not None:
        return hit
    if model.is_symbolic:
        source = point_source(model)
        if mode == "numba":
            jit = numba.njit(error_model="numpy")
            points = _compile_points(source, jit)
        else:
            points = _compile_points(source, _identity)
    else:
        jit = _identity
        points = _callable_points(model)
    kjit = numba.njit(error_model="numpy") if mode == "numba" else _identity
    fns = _factory(points["coef"], points["dcoef"], points["bnd_u"], points["bnd_v"], kjit, vectorized=(mode == "numpy"))
    ks = KernelSet(mode, points["coef"], points["dcoef"], points["bnd_u"], points["bnd_v"], fns)
    _CACHE[key] = ks
    return ks
