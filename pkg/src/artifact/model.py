"""System definition for 2x2 quasilinear hyperbolic systems with boundary actuation.

The state ``w = (u, v)`` on ``x in [0, 1]`` evolves as

    u_t = -lambda_u(x, w) u_x + f_u(x, w)
    v_t =  lambda_v(x, w) v_x + f_v(x, w)

with ``u(0, t) = g_u(v(0, t), t)`` and ``v(1, t) = U(t) + g_v(u(1, t), t)``.
Both speeds are positive, so ``u`` travels towards ``x = 1`` and ``v`` towards
``x = 0``.  The input ``U`` acts at ``x = 1``.

Coefficients are :class:`Coefficient` objects built either from the expression
language in :mod:`artifact.expr` (exact partial derivatives) or from plain
Python callables (centred finite differences).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import expr as ex

ArrayLike = float | np.ndarray

FD_STEP = 1e-6


class ModelError(ValueError):
    """Invalid model definition or a hyperbolicity violation."""


def _broadcast(value: ArrayLike, *args: ArrayLike) -> np.ndarray:
    shape = np.broadcast_shapes(*(np.shape(a) for a in args))
    return np.broadcast_to(np.asarray(value, dtype=float), shape).copy() if shape else np.asarray(value, dtype=float)


class Coefficient:
    """A scalar function of ``(x, u, v, t)``.

    Build from DSL text with :meth:`parse` or from a callable with
    :meth:`from_callable`.  Instances are immutable and vectorised.
    """

    __slots__ = ("ast", "func", "text", "_np", "_partials")

    def __init__(self, ast: ex.Node | None = None, func: Callable[..., ArrayLike] | None = None, text: str = ""):
        if (ast is None) == (func is None):
            raise ValueError("give exactly one of ast or func")
        self.ast = ast
        self.func = func
        self.text = text or (ex.to_string(ast) if ast is not None else getattr(func, "__name__", "<callable>"))
        self._np = ex.to_numpy(ast) if ast is not None else None
        self._partials: dict[str, Coefficient] = {}

    @classmethod
    def parse(cls, text: str) -> "Coefficient":
        return cls(ast=ex.parse(text), text=text.strip())

    @classmethod
    def constant(cls, value: float) -> "Coefficient":
        return cls(ast=ex.Const(float(value)), text=repr(float(value)))

    @classmethod
    def from_callable(cls, func: Callable[..., ArrayLike], name: str = "") -> "Coefficient":
        """Wrap ``func(x, u, v, t)``; it must accept numpy arrays."""
        return cls(func=func, text=name)

    @property
    def is_symbolic(self) -> bool:
        return self.ast is not None

    def variables(self) -> set[str]:
        if self.ast is None:
            return set(ex.VARIABLES)
        return ex.variables(self.ast)

    def source(self) -> str:
        """numpy/numba source text; only for symbolic coefficients."""
        if self.ast is None:
            raise ModelError("callable coefficients have no source form")
        return ex.to_source(self.ast)

    def __call__(self, x: ArrayLike = 0.0, u: ArrayLike = 0.0, v: ArrayLike = 0.0, t: ArrayLike = 0.0) -> np.ndarray:
        args = [np.asarray(a, dtype=float) for a in (x, u, v, t)]
        with np.errstate(all="ignore"):
            if self._np is not None:
                out = self._np(*args)
            else:
                out = self.func(*args)
        return _broadcast(out, *args)

    def derivative(self, var: str) -> "Coefficient":
        """Partial derivative; cached per instance."""
        hit = self._partials.get(var)
        if hit is None:
            hit = self._partials[var] = self._derivative(var)
        return hit

    def _derivative(self, var: str) -> "Coefficient":
        if self.ast is not None:
            return Coefficient(ast=ex.differentiate(self.ast, var))
        index = ex.VARIABLES.index(var)
        base = self

        def d(x, u, v, t):
            args = [np.asarray(a, dtype=float) for a in (x, u, v, t)]
            step = FD_STEP * np.maximum(1.0, np.abs(args[index]))
            hi = list(args)
            lo = list(args)
            hi[index] = args[index] + step
            lo[index] = args[index] - step
            return (base(*hi) - base(*lo)) / (2.0 * step)

        return Coefficient(func=d, text=f"d({self.text})/d{var}")

    def __repr__(self) -> str:
        return f"Coefficient({self.text!r})"


def as_coefficient(value: "Coefficient | str | float | Callable[..., ArrayLike]") -> Coefficient:
    if isinstance(value, Coefficient):
        return value
    if isinstance(value, str):
        return Coefficient.parse(value)
    if isinstance(value, (int, float)):
        return Coefficient.constant(float(value))
    if callable(value):
        return Coefficient.from_callable(value)
    raise TypeError(f"cannot make a coefficient from {value!r}")


@dataclass(frozen=True)
class ModelFactors:
    """Multiplicative scalings used for perturbed plants.

    ``k_gv`` adds ``k_gv * u`` to the reflection at ``x = 1`` and ``s_U``
    scales the actuator.  The defaults describe the nominal model.
    """

    s_lambda_u: float = 1.0
    s_lambda_v: float = 1.0
    s_f_u: float = 1.0
    s_f_v: float = 1.0
    s_g_u: float = 1.0
    k_g_v: float = 0.0
    s_U: float = 1.0

    def vector(self) -> np.ndarray:
        return np.array(
            [self.s_lambda_u, self.s_lambda_v, self.s_f_u, self.s_f_v, self.s_g_u, self.k_g_v, self.s_U],
            dtype=float,
        )

    @property
    def is_nominal(self) -> bool:
        return self == ModelFactors()


_ALLOWED = {
    "lambda_u": {"x", "u", "v"},
    "lambda_v": {"x", "u", "v"},
    "f_u": {"x", "u", "v"},
    "f_v": {"x", "u", "v"},
    "g_u": {"v", "t"},
    "g_v": {"u", "t"},
}


@dataclass(frozen=True)
class SystemModel:
    """Coefficients, boundary maps and perturbation factors of one system."""

    lambda_u: Coefficient
    lambda_v: Coefficient
    f_u: Coefficient
    f_v: Coefficient
    g_u: Coefficient
    g_v: Coefficient = field(default_factory=lambda: Coefficient.constant(0.0))
    stabilizing: bool = True
    factors: ModelFactors = field(default_factory=ModelFactors)
    name: str = "model"

    def __post_init__(self) -> None:
        for key, allowed in _ALLOWED.items():
            coeff = getattr(self, key)
            if coeff.is_symbolic:
                extra = coeff.variables() - allowed
                if extra:
                    raise ModelError(f"{key} may only depend on {sorted(allowed)}, found {sorted(extra)}")

    @classmethod
    def from_strings(
        cls,
        lambda_u: str | Coefficient,
        lambda_v: str | Coefficient,
        f_u: str | Coefficient,
        f_v: str | Coefficient,
        g_u: str | Coefficient,
        g_v: str | Coefficient = "0",
        stabilizing: bool = True,
        name: str = "model",
    ) -> "SystemModel":
        return cls(
            as_coefficient(lambda_u),
            as_coefficient(lambda_v),
            as_coefficient(f_u),
            as_coefficient(f_v),
            as_coefficient(g_u),
            as_coefficient(g_v),
            stabilizing=stabilizing,
            name=name,
        )

    # -- identity -----------------------------------------------------------

    @property
    def is_symbolic(self) -> bool:
        return all(c.is_symbolic for c in self.coefficients())

    def coefficients(self) -> tuple[Coefficient, ...]:
        return (self.lambda_u, self.lambda_v, self.f_u, self.f_v, self.g_u, self.g_v)

    def structure_key(self) -> tuple:
        """Hashable key identifying the coefficient functions (not the factors)."""
        if self.is_symbolic:
            return tuple(c.text if c.ast is None else ex.to_string(c.ast) for c in self.coefficients())
        return tuple(id(c) for c in self.coefficients())

    def nominal(self) -> "SystemModel":
        return replace(self, factors=ModelFactors())

    def with_factors(self, factors: ModelFactors) -> "SystemModel":
        return replace(self, factors=factors)

    def param_vector(self) -> np.ndarray:
        return self.factors.vector()

    def depends_on_x(self) -> bool:
        return any("x" in c.variables() for c in (self.lambda_u, self.lambda_v, self.f_u, self.f_v))

    # -- evaluation ---------------------------------------------------------

    def eval_coeffs(self, x: ArrayLike, u: ArrayLike, v: ArrayLike, t: ArrayLike = 0.0, check: bool = True):
        """Return ``(lambda_u, lambda_v, f_u, f_v)`` at the given points."""
        p = self.factors
        lu = p.s_lambda_u * self.lambda_u(x, u, v, t)
        lv = p.s_lambda_v * self.lambda_v(x, u, v, t)
        fu = p.s_f_u * self.f_u(x, u, v, t)
        fv = p.s_f_v * self.f_v(x, u, v, t)
        if check:
            bad = ~((lu > 0.0) & (lv > 0.0))
            if np.any(bad):
                idx = np.unravel_index(int(np.argmax(bad)), np.shape(bad)) if np.ndim(bad) else ()
                pick = lambda a: float(np.broadcast_to(np.asarray(a, dtype=float), np.shape(bad))[idx])  # noqa: E731
                raise ModelError(
                    "transport speeds must be positive: "
                    f"lambda_u={pick(lu):.6g}, lambda_v={pick(lv):.6g} at x={pick(x):.6g}, u={pick(u):.6g}, v={pick(v):.6g}"
                )
        return lu, lv, fu, fv

    def eval_partials(self, x: ArrayLike, u: ArrayLike, v: ArrayLike, t: ArrayLike = 0.0):
        """Return the eight state partials of ``lambda_u, lambda_v, f_u, f_v``.

        Order: ``dlu/du, dlu/dv, dlv/du, dlv/dv, dfu/du, dfu/dv, dfv/du, dfv/dv``.
        """
        p = self.factors
        out = []
        for coeff, s in (
            (self.lambda_u, p.s_lambda_u),
            (self.lambda_v, p.s_lambda_v),
            (self.f_u, p.s_f_u),
            (self.f_v, p.s_f_v),
        ):
            for var in ("u", "v"):
                out.append(s * _partial(coeff, var)(x, u, v, t))
        return tuple(out)

    def eval_c_coeffs(self, x: ArrayLike, u: ArrayLike, v: ArrayLike, t: ArrayLike = 0.0):
        """The eight coefficients ``c1..c8`` of the derivative equations along characteristics."""
        lu, lv, fu, fv = self.eval_coeffs(x, u, v, t, check=False)
        lu_u, lu_v, lv_u, lv_v, fu_u, fu_v, fv_u, fv_v = self.eval_partials(x, u, v, t)
        with np.errstate(all="ignore"):
            c1 = lu_u / lu
            c2 = lu_v / lu
            c5 = lv_u / lv
            c6 = lv_v / lv
            return c1, c2, fu_u - c1 * fu, fu_v - c2 * fu, c5, c6, fv_u - c5 * fv, fv_v - c6 * fv

    def boundary_u(self, v: ArrayLike, t: ArrayLike = 0.0) -> np.ndarray:
        """``u(0, t)`` implied by ``v(0, t)``."""
        return self.factors.s_g_u * self.g_u(0.0, 0.0, v, t)

    def boundary_u_partials(self, v: ArrayLike, t: ArrayLike = 0.0) -> tuple[np.ndarray, np.ndarray]:
        s = self.factors.s_g_u
        return s * _partial(self.g_u, "v")(0.0, 0.0, v, t), s * _partial(self.g_u, "t")(0.0, 0.0, v, t)

    def boundary_v(self, u: ArrayLike, U: ArrayLike, t: ArrayLike = 0.0) -> np.ndarray:
        """``v(1, t)`` produced by input ``U`` when ``u(1, t) = u``."""
        p = self.factors
        return p.s_U * np.asarray(U, dtype=float) + self.g_v(0.0, u, 0.0, t) + p.k_g_v * np.asarray(u, dtype=float)

    def input_for_boundary(self, v1: ArrayLike, u1: ArrayLike, t: ArrayLike = 0.0) -> np.ndarray:
        """Inverse of :meth:`boundary_v` in ``U`` (nominal actuator)."""
        p = self.factors
        return (np.asarray(v1, dtype=float) - self.g_v(0.0, u1, 0.0, t) - p.k_g_v * np.asarray(u1, dtype=float)) / p.s_U


def _partial(coeff: Coefficient, var: str) -> Coefficient:
    return coeff.derivative(var)


# ---------------------------------------------------------------------------
# Lipschitz constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box of states ``u in [u_lo, u_hi]``, ``v in [v_lo, v_hi]``."""

    u_lo: float
    u_hi: float
    v_lo: float
    v_hi: float

    @classmethod
    def symmetric(cls, radius: float) -> "StateBox":
        r = abs(float(radius))
        return cls(-r, r, -r, r)

    @classmethod
    def coerce(cls, box: "StateBox | float | Sequence[Sequence[float]]") -> "StateBox":
        if isinstance(box, StateBox):
            return box
        if isinstance(box, (int, float)):
            return cls.symmetric(float(box))
        (a, b), (c, d) = box
        return cls(float(a), float(b), float(c), float(d))

    @property
    def radius(self) -> float:
        return max(abs(self.u_lo), abs(self.u_hi), abs(self.v_lo), abs(self.v_hi))


def nested_grid(lo: float, hi: float, density: int) -> np.ndarray:
    """Union of uniform grids with ``density, ceil(density/2), ...`` points.

    Doubling ``density`` yields a superset, so sampled suprema never decrease.
    """
    if density < 2:
        raise ValueError("grid density must be at least 2")
    if hi == lo:
        return np.array([lo])
    pts = []
    n = int(density)
    while True:
        pts.append(np.linspace(lo, hi, n))
        if n <= 2:
            break
        n = (n + 1) // 2
    return np.unique(np.concatenate(pts))


@dataclass(frozen=True)
class LipschitzConstants:
    """Sampled Lipschitz and speed bounds over a state box."""

    l_Lambda: float
    l_F: float
    l_gu: float
    l_Lambda_inv: float
    lambda_max: float
    box: StateBox
    grid_density: int


def sample_box(model: SystemModel, box: StateBox, density: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample points ``(x, u, v)`` of ``[0,1] x box``, skipping x when unused."""
    xs = nested_grid(0.0, 1.0, density) if model.depends_on_x() else np.array([0.0])
    us = nested_grid(box.u_lo, box.u_hi, density)
    vs = nested_grid(box.v_lo, box.v_hi, density)
    X, Uu, V = np.meshgrid(xs, us, vs, indexing="ij")
    return X.ravel(), Uu.ravel(), V.ravel()


def estimate_lipschitz(
    model: SystemModel,
    state_box: StateBox | float | Sequence[Sequence[float]],
    grid_density: int = 101,
    t_max: float = 1.0,
) -> LipschitzConstants:
    """Sampled Lipschitz constants of the model over ``[0,1] x state_box``.

    ``g_u`` is sampled over ``v`` in the box and ``t`` in ``[0, t_max]``.
    Values are sampled suprema, not certified bounds.
    """
    box = StateBox.coerce(state_box)
    X, Uu, V = sample_box(model, box, grid_density)
    lu, lv, fu, fv = model.eval_coeffs(X, Uu, V, check=False)
    parts = [np.abs(a) for a in model.eval_partials(X, Uu, V)]
    lu_u, lu_v, lv_u, lv_v, fu_u, fu_v, fv_u, fv_v = parts
    l_lambda = float(np.max(np.maximum.reduce([lu_u, lu_v, lv_u, lv_v])))
    l_f = float(np.max(np.maximum(fu_u + fu_v, fv_u + fv_v)))
    with np.errstate(divide="ignore"):
        inv = np.maximum(1.0 / lu, 1.0 / lv)
    if np.any(~((lu > 0) & (lv > 0))):
        warnings.warn("transport speeds are not positive everywhere on the state box", RuntimeWarning, stacklevel=2)
        inv = np.where((lu > 0) & (lv > 0), inv, np.inf)
    l_inv = float(np.max(inv))
    lam_max = float(np.max(np.maximum(np.abs(lu), np.abs(lv))))
    vs = nested_grid(box.v_lo, box.v_hi, grid_density)
    ts = nested_grid(0.0, t_max, grid_density) if "t" in model.g_u.variables() else np.array([0.0])
    Vg, Tg = np.meshgrid(vs, ts, indexing="ij")
    gu_v, _ = model.boundary_u_partials(Vg.ravel(), Tg.ravel())
    gu_v = np.abs(gu_v).reshape(Vg.shape)
    l_gu = float(np.max(gu_v))
    if vs.size > 2 and np.isfinite(l_gu):
        # polish the best sample with a bounded 1-d search in v (t fixed)
        i, j = np.unravel_index(int(np.argmax(gu_v)), gu_v.shape)
        lo, hi = vs[max(i - 1, 0)], vs[min(i + 1, vs.size - 1)]
        t_best = float(ts[j])
        res = minimize_scalar(
            lambda z: -abs(float(model.boundary_u_partials(z, t_best)[0])),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-13},
        )
        if res.success and np.isfinite(res.fun):
            l_gu = max(l_gu, -float(res.fun))
    return LipschitzConstants(l_lambda, l_f, l_gu, l_inv, lam_max, box, int(grid_density))


# ---------------------------------------------------------------------------
# initial data and the built-in example
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InitialData:
    """Initial profiles ``u0(x)``, ``v0(x)`` on ``[0, 1]``."""

    u0: Coefficient
    v0: Coefficient

    @classmethod
    def from_strings(cls, u0: str | float | Coefficient, v0: str | float | Coefficient) -> "InitialData":
        return cls(as_coefficient(u0), as_coefficient(v0))

    @classmethod
    def constant(cls, u0: float, v0: float) -> "InitialData":
        return cls(Coefficient.constant(u0), Coefficient.constant(v0))

    def sample(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(0.0, 1.0, m + 1)
        return self.u0(x), self.v0(x)

    def sup_norm(self, samples: int = 2001) -> float:
        u, v = self.sample(samples - 1)
        return float(max(np.max(np.abs(u)), np.max(np.abs(v))))

    def lipschitz(self, samples: int = 2001) -> float:
        u, v = self.sample(samples - 1)
        h = 1.0 / (samples - 1)
        return float(max(np.max(np.abs(np.diff(u))), np.max(np.abs(np.diff(v)))) / h)

    def compatibility_residual(self, model: SystemModel) -> float:
        """``|u0(0) - g_u(v0(0), 0)|``."""
        return float(abs(self.u0(0.0) - model.boundary_u(self.v0(0.0), 0.0)))


@dataclass(frozen=True)
class ExampleSettings:
    theta: float = 0.25
    delta: float = 0.2
    t_end: float = 15.0


EXAMPLE_COEFFICIENTS = {
    "lambda_u": "1",
    "lambda_v": "max(1-0.5*abs(v),0.2)",
    "f_u": "2/3*(u-v)",
    "f_v": "-2/3*(u-v)",
    "g_u": "1-cos(2*v)+v*cos(2)",
    "g_v": "0",
}


def builtin_example() -> tuple[SystemModel, InitialData, ExampleSettings]:
    """The reference example: unit ``lambda_u``, clamped ``lambda_v``, constant unit initial data."""
    model = SystemModel.from_strings(name="example", **EXAMPLE_COEFFICIENTS)
    return model, InitialData.constant(1.0, 1.0), ExampleSettings()


def check_equilibrium(model: SystemModel, box: StateBox | float = 1.0, density: int = 21) -> float:
    """Largest ``|f|`` at ``w = 0`` and ``|g_u(0, t)|``; zero for stabilisable models."""
    xs = np.linspace(0.0, 1.0, density)
    _, _, fu, fv = model.eval_coeffs(xs, 0.0, 0.0, check=False)
    ts = np.linspace(0.0, 1.0, density)
    return float(max(np.max(np.abs(fu)), np.max(np.abs(fv)), np.max(np.abs(model.boundary_u(0.0, ts)))))


__all__ = [
    "Coefficient",
    "ExampleSettings",
    "InitialData",
    "LipschitzConstants",
    "ModelError",
    "ModelFactors",
    "StateBox",
    "SystemModel",
    "as_coefficient",
    "builtin_example",
    "check_equilibrium",
    "estimate_lipschitz",
    "nested_grid",
    "sample_box",
]
