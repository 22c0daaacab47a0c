"""Explicit certificate constants and hypothesis checks.

Every supremum here is a sampled maximum over a tensor grid (see
:func:`artifact.model.nested_grid`), so the numbers are *sampled, not
certified*.  Constants that the theory only asserts to exist (``kappa_6``,
``kappa~_10`` and friends) are never invented: they enter as explicit user
parameters.

Notation follows the module docstrings of :mod:`artifact.model`:
``l_F``, ``l_Lambda``, ``l_gu`` are Lipschitz constants, ``l_Lambda_inv`` is
the largest inverse speed, and ``c1..c8`` are the coefficients of the
derivative equations along characteristics.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (
    LipschitzConstants,
    ModelFactors,
    StateBox,
    SystemModel,
    estimate_lipschitz,
    nested_grid,
)


# ---------------------------------------------------------------------------
# the quadratic comparison lemma
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lemma1Bound:
    """Closed-form bound for ``|a(t)| <= |a0| + int_0^t gamma (|a|^2 + |a|)``.

    ``precondition_ok`` records whether ``|a0| <= exp(-gamma T)`` and
    ``gamma > 0`` hold; when they do not, ``reason`` says why and the bound
    is not guaranteed (it may even be infinite before ``T``).
    """

    alpha0: float
    gamma: float
    T: float
    precondition_ok: bool
    reason: str = ""

    def __call__(self, t: float | np.ndarray) -> float | np.ndarray:
        a = abs(self.alpha0)
        t_arr = np.asarray(t, dtype=float)
        den = -a + (a + 1.0) * np.exp(-self.gamma * t_arr)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den > 0.0, a / np.where(den > 0.0, den, 1.0), np.inf)
        return float(out) if out.ndim == 0 else out

    @property
    def coarse(self) -> float:
        """The uniform bound ``|a0| exp(2 gamma T)``."""
        return abs(self.alpha0) * math.exp(2.0 * self.gamma * self.T)

    def blowup_time(self) -> float:
        """Time at which the comparison solution becomes infinite."""
        a = abs(self.alpha0)
        if a == 0.0 or self.gamma <= 0.0:
            return math.inf
        return math.log((a + 1.0) / a) / self.gamma


def lemma1_bound(alpha0: float, gamma: float, T: float) -> Lemma1Bound:
    """Comparison bound of the quadratic integral inequality on ``[0, T]``.

    The returned object evaluates ``|a0| / (-|a0| + (|a0|+1) exp(-gamma t))``.
    Precondition failures are reported through ``precondition_ok``.
    """
    alpha0, gamma, T = float(alpha0), float(gamma), float(T)
    reasons = []
    if not gamma > 0.0:
        reasons.append(f"gamma={gamma!r} must be positive")
    if not T > 0.0:
        reasons.append(f"T={T!r} must be positive")
    if gamma > 0.0 and T > 0.0 and abs(alpha0) > math.exp(-gamma * T):
        reasons.append(f"|alpha0|={abs(alpha0)!r} exceeds exp(-gamma*T)={math.exp(-gamma * T)!r}")
    return Lemma1Bound(alpha0, gamma, T, not reasons, "; ".join(reasons))


# ---------------------------------------------------------------------------
# sampled suprema of coefficient combinations
# ---------------------------------------------------------------------------


def multiscale_axis(radius: float, density: int) -> np.ndarray:
    """Samples of ``[-radius, radius]`` refined towards the origin.

    Union of nested grids on ``[-radius/4^j, radius/4^j]`` for every level
    whose half-width is at least ``min(radius, 1) / 4``, so unit-scale
    features stay resolved inside very large boxes.
    """
    r = abs(float(radius))
    if r == 0.0:
        return np.array([0.0])
    floor = min(r, 1.0) / 4.0
    pts = []
    while r >= floor:
        pts.append(nested_grid(-r, r, density))
        r /= 4.0
    return np.unique(np.concatenate(pts))


def _sample_points(model: SystemModel, radius: float, density: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    axis = multiscale_axis(radius, density)
    xs = nested_grid(0.0, 1.0, density) if model.depends_on_x() else np.array([0.0])
    X, U, V = np.meshgrid(xs, axis, axis, indexing="ij")
    return X.ravel(), U.ravel(), V.ravel()


def _c_sups(model: SystemModel, radius: float, density: int) -> dict[str, float]:
    """Sampled sups of the combinations used by the gamma constants on ``|z| <= radius``."""
    X, U, V = _sample_points(model, radius, density)
    c = model.eval_c_coeffs(X, U, V)
    lu, lv, _, _ = model.eval_coeffs(X, U, V, check=False)
    c1, c2, c3, c4, c5, c6, c7, c8 = (np.abs(np.asarray(a, dtype=float)) for a in c)
    s = lambda a: float(np.max(a)) if np.all(np.isfinite(a)) else math.inf  # noqa: E731
    with np.errstate(all="ignore"):
        raw = [np.abs(a) for a in c]
        pair = [np.abs(c[0] + c[1]), np.abs(c[2] + c[3]), np.abs(c[4] + c[5]), np.abs(c[6] + c[7])]
        return {
            "pair": max(s(a) for a in pair),
            "pair_scaled": max(
                s(pair[0] / lu),
                s(pair[1] / lu),
                s(pair[2] / lv),
                s(pair[3] / lv),
            ),
            "c68_over_lv": max(s(raw[5] / lv), s(raw[7] / lv)),
            "c57_over_lv": max(s(raw[4] / lv), s(raw[6] / lv)),
            "abs_max": max(s(a) for a in (c1, c2, c3, c4, c5, c6, c7, c8)),
        }


def _perturbation_corners(eps_lambda: float, eps_f: float) -> list[ModelFactors]:
    if eps_lambda == 0.0 and eps_f == 0.0:
        return [ModelFactors()]
    out = []
    for a, b, c, d in itertools.product((-1, 1), repeat=4):
        out.append(
            ModelFactors(
                s_lambda_u=1 + a * eps_lambda,
                s_lambda_v=1 + b * eps_lambda,
                s_f_u=1 + c * eps_f,
                s_f_v=1 + d * eps_f,
            )
        )
    return out


def _perturbed_sups(model: SystemModel, radius: float, density: int, eps_lambda: float, eps_f: float) -> dict[str, float]:
    best: dict[str, float] = {}
    for fac in _perturbation_corners(eps_lambda, eps_f):
        sups = _c_sups(model.with_factors(fac), radius, density)
        for k, v in sups.items():
            best[k] = max(best.get(k, 0.0), v)
    return best


def _smallest_gamma(sup: float, lhs_factor: float) -> tuple[float, bool]:
    """Smallest ``g >= sup`` with ``lhs_factor <= exp(-4 g) g``.

    ``exp(-4 g) g`` peaks at ``g = 1/4``, so the search stops there.
    Returns ``(g, feasible)``; when infeasible ``g = sup``.
    """
    rhs = lambda g: math.exp(-4.0 * g) * g  # noqa: E731
    if not math.isfinite(sup) or not math.isfinite(lhs_factor):
        return sup, False
    if lhs_factor <= rhs(sup) or lhs_factor == 0.0:
        return sup, True
    if sup >= 0.25 or lhs_factor > rhs(0.25):
        return sup, False
    lo, hi = sup, 0.25
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if lhs_factor <= rhs(mid):
            hi = mid
        else:
            lo = mid
    return hi, True


# ---------------------------------------------------------------------------
# the report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """One checked hypothesis: ``lhs <= rhs``."""

    name: str
    lhs: float
    rhs: float
    description: str

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs)


@dataclass(frozen=True)
class UncertaintyBounds:
    """Error bound fractions used by the robustness certificates."""

    eps_Lambda: float = 0.0
    eps_F: float = 0.0
    eps_gu: float = 0.0
    eps_gv: float = 0.0
    eps_w: float = 0.0
    eps_wt: float = 0.0
    eps_U: float = 0.0

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not (value >= 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a nonnegative finite number")


@dataclass(frozen=True)
class BoundsReport:
    """All computable certificate constants for one model and initial condition."""

    lipschitz: LipschitzConstants
    w0_norm: float
    wt0_norm: float
    theta: float
    horizon: float
    kappa1: float
    kappa2: float
    kappa3: float
    gamma1: float
    gamma1_tilde: float
    gamma2: float
    gamma3: float
    gamma4: float
    gamma5: float
    ctilde_prime_semiglobal: float
    ctilde_prime_global: float
    ctilde_prime_D0: float
    delta_max_nominal: float
    delta_bar_max: float
    delta_bar_max1: float
    delta_max_robust: float
    sigma: float
    state_box: StateBox
    grid_density: int
    uncertainty: UncertaintyBounds
    delta: float | None
    conditions: tuple[Condition, ...] = field(default=())

    # -- convenience --------------------------------------------------------

    @property
    def l_Lambda_inv(self) -> float:
        return self.lipschitz.l_Lambda_inv

    @property
    def l_F(self) -> float:
        return self.lipschitz.l_F

    @property
    def l_gu(self) -> float:
        return self.lipschitz.l_gu

    @property
    def l_Lambda(self) -> float:
        return self.lipschitz.l_Lambda

    def failed(self) -> list[Condition]:
        return [c for c in self.conditions if not c.passed]

    def items(self) -> list[tuple[str, object]]:
        """Ordered ``(key, value)`` pairs used by the text and CSV writers."""
        lip = self.lipschitz
        box = self.state_box
        rows: list[tuple[str, object]] = [
            ("status", "sampled, not certified"),
            ("state_box", f"u in [{box.u_lo!r}, {box.u_hi!r}], v in [{box.v_lo!r}, {box.v_hi!r}]"),
            ("grid_density", self.grid_density),
            ("w0_norm", self.w0_norm),
            ("wt0_norm", self.wt0_norm),
            ("theta", self.theta),
            ("horizon", self.horizon),
            ("l_Lambda", lip.l_Lambda),
            ("l_F", lip.l_F),
            ("l_gu", lip.l_gu),
            ("l_Lambda_inv", lip.l_Lambda_inv),
            ("lambda_max", lip.lambda_max),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("kappa3", self.kappa3),
            ("gamma1", self.gamma1),
            ("gamma1_tilde", self.gamma1_tilde),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("gamma4", self.gamma4),
            ("gamma5", self.gamma5),
            ("ctilde_prime_semiglobal", self.ctilde_prime_semiglobal),
            ("ctilde_prime_global", self.ctilde_prime_global),
            ("ctilde_prime_D0", self.ctilde_prime_D0),
            ("delta_max_nominal", self.delta_max_nominal),
            ("delta_bar_max", self.delta_bar_max),
            ("delta_bar_max1", self.delta_bar_max1),
            ("delta_max_robust", self.delta_max_robust),
            ("sigma", self.sigma),
        ]
        for name in ("eps_Lambda", "eps_F", "eps_gu", "eps_gv", "eps_w", "eps_wt", "eps_U"):
            rows.append((name, getattr(self.uncertainty, name)))
        if self.delta is not None:
            rows.append(("delta", self.delta))
        for c in self.conditions:
            rows.append((f"check.{c.name}", f"{'PASS' if c.passed else 'FAIL'} {c.lhs!r} <= {c.rhs!r}"))
        return rows

    def warnings(self) -> list[str]:
        out = []
        if self.delta is not None and self.delta > self.delta_max_nominal:
            out.append(
                f"operating delta={self.delta!r} exceeds the certified nominal delta_max={self.delta_max_nominal!r}; "
                "the certificate is conservative and does not cover this setting"
            )
        return out

    def to_text(self) -> str:
        rows = self.items()
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {_fmt(v)}" for k, v in rows]
        lines += [f"warning: {w}" for w in self.warnings()]
        return "\n".join(lines) + "\n"

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["key", "value"])
        for k, v in self.items():
            writer.writerow([k, _fmt(v)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def compute_report(
    model: SystemModel,
    w0_norms: float | Sequence[float],
    theta: float,
    state_box: StateBox | float | None = None,
    density: int = 101,
    *,
    uncertainty: UncertaintyBounds | None = None,
    delta: float | None = None,
    horizon: float | None = None,
    dgu_dt_norm: float = 0.0,
    U_norm: float | None = None,
    kappa_tilde10: float | None = None,
) -> BoundsReport:
    """Evaluate every explicit constant for ``model`` and the initial data norms.

    ``w0_norms`` is ``||w0||`` or the pair ``(||w0||, ||w_t(., 0)||)``.
    ``state_box`` is where the Lipschitz constants are sampled; by default
    the box of radius ``1.5 kappa1^2 ||w0||`` is used after a fixed-point
    iteration (the constants depend on the box).  ``horizon`` is the time
    ``T`` of the semi-global threshold, by default ``l_Lambda_inv``.
    ``kappa_tilde10`` is the existential constant of the ``eps_gv``
    condition; without it that part of the check is skipped.
    """
    if isinstance(w0_norms, (int, float)):
        w0, wt0 = float(w0_norms), 0.0
    else:
        w0, wt0 = (float(a) for a in w0_norms)
    if not (w0 >= 0 and wt0 >= 0):
        raise ValueError("norms must be nonnegative")
    if not theta > 0:
        raise ValueError("theta must be positive")
    unc = uncertainty or UncertaintyBounds()

    if state_box is None:
        radius = max(w0, 1e-12)
        lip = estimate_lipschitz(model, radius, density)
        for _ in range(50):
            k1 = max(1.0, lip.l_gu) * _safe_exp(lip.l_F * lip.l_Lambda_inv)
            want = 1.5 * k1 * k1 * w0
            if not math.isfinite(want) or want <= radius * (1 + 1e-12):
                break
            radius = want
            lip = estimate_lipschitz(model, radius, density)
        box = StateBox.symmetric(radius)
    else:
        box = StateBox.coerce(state_box)
        lip = estimate_lipschitz(model, box, density)

    mg = max(1.0, lip.l_gu)
    linv = lip.l_Lambda_inv
    kappa1 = mg * _safe_exp(lip.l_F * linv)
    T = linv if horizon is None else float(horizon)

    # nominal constants
    c_d0 = kappa1 * w0
    sup_d0 = _c_sups(model, c_d0, density)
    gamma1 = sup_d0["pair"]
    ctilde_D0 = _safe_exp(-2.0 * gamma1 * linv) / (2.0 * mg)

    c_tilde_sg = max(w0, U_norm if U_norm is not None else w0)
    n_refl = int(math.ceil(lip.lambda_max * T / 2.0))
    c_sg = mg**n_refl * _safe_exp(lip.l_F * T) * c_tilde_sg
    gamma1_sg = _c_sups(model, c_sg, density)["pair"]
    ctilde_sg = _safe_exp(-2.0 * gamma1_sg * T) / sum(mg**i for i in range(n_refl + 1))

    c_glob = kappa1 * kappa1 * w0
    gamma2 = _c_sups(model, c_glob, density)["pair_scaled"]
    delta_max_nominal = _safe_exp(-gamma2) / (2.0 * mg)
    ctilde_global = _safe_exp(-2.0 * gamma1 * gamma2) / (4.0 * mg * mg)

    # robust constants
    c_rob = 1.5 * kappa1 * kappa1 * w0
    pert = _perturbed_sups(model, c_rob, density, unc.eps_Lambda, unc.eps_F)
    gamma3 = pert["pair"]
    kappa2 = mg * _safe_exp(2.0 * gamma3 * linv)
    c_tilde_rob = 2.0 * kappa1 * c_rob
    sup_big = _c_sups(model, c_tilde_rob, density)
    gamma1_tilde = sup_big["pair"]
    delta_bar_max1 = _safe_exp(-2.0 * gamma1_tilde * linv) / (2.0 * kappa2 * mg)
    kappa3 = 2.0 * kappa2 * mg * _safe_exp(2.0 * gamma1_tilde * linv)
    first = 1.0 / (kappa2 * linv * linv * lip.l_Lambda) if kappa2 * linv * linv * lip.l_Lambda > 0 else math.inf
    delta_bar_max = 0.5 * min(first, _safe_exp(-2.0 * gamma1_tilde * linv) / (kappa2 * mg), w0 / (theta + linv))

    gamma4, _ = _smallest_gamma(pert["c68_over_lv"], pert["c57_over_lv"] * kappa2)
    gamma5, _ = _smallest_gamma(sup_big["c68_over_lv"], sup_big["c57_over_lv"] * kappa3 * kappa2)
    delta_max_robust = (2.0 / 3.0) * _safe_exp(-4.0 * (gamma4 + gamma5)) * delta_bar_max
    # l^2 l_Lambda kappa2 delta_bar_max, expanded term by term so that an
    # infinite kappa2 against a vanishing delta_bar_max stays finite (<= 1/2)
    geo = linv * linv * lip.l_Lambda
    with np.errstate(all="ignore"):
        expo = 0.5 * min(
            1.0,
            geo * _safe_exp(-2.0 * gamma1_tilde * linv) / mg,
            geo * kappa2 * w0 / (theta + linv) if geo * w0 > 0 else 0.0,
        )
    sigma = _safe_exp(-expo) * theta

    conds = [
        Condition("box_covers_a_priori_bound", 1.5 * kappa1 * kappa1 * w0, box.radius, "state box radius covers 1.5 kappa1^2 ||w0||"),
        Condition("determinate_set_wt0", wt0, ctilde_D0, "||w_t(.,0)|| below the determinate-set threshold"),
        Condition("determinate_set_dgu_dt", float(dgu_dt_norm), ctilde_D0, "||d_t g_u|| below the determinate-set threshold"),
        Condition("global_wt0", wt0, ctilde_global, "||w_t(.,0)|| below the closed-loop global-existence threshold"),
        Condition("robust_wt0", wt0, delta_bar_max / kappa2, "||w_t(.,0)|| below delta_bar_max / kappa2"),
        Condition(
            "gamma4_coupling",
            pert["c57_over_lv"] * kappa2,
            math.exp(-4.0 * gamma4) * gamma4 if math.isfinite(gamma4) else 0.0,
            "coupling terms small enough for gamma4 (perturbed coefficients)",
        ),
        Condition(
            "gamma5_coupling",
            sup_big["c57_over_lv"] * kappa3 * kappa2,
            math.exp(-4.0 * gamma5) * gamma5 if math.isfinite(gamma5) else 0.0,
            "coupling terms small enough for gamma5 (nominal coefficients)",
        ),
    ]
    if delta is not None:
        conds.append(Condition("delta_nominal", float(delta), delta_max_nominal, "operating delta below nominal delta_max"))
        conds.append(Condition("delta_robust", float(delta), delta_max_robust, "operating delta below robust delta_max"))
    if uncertainty is not None:
        gv_limit = math.exp(-4.0 * gamma4) / (6.0 * kappa2) if math.isfinite(gamma4) else 0.0
        if kappa_tilde10 is not None:
            gv_limit = min(gv_limit, 1.0 / float(kappa_tilde10))
        conds += [
            Condition("eps_w", unc.eps_w, 1.0, "measurement error fraction at most 1"),
            Condition("eps_wt", unc.eps_wt, 1.0, "derivative measurement error fraction at most 1"),
            Condition("eps_gv", unc.eps_gv, gv_limit, "reflection error below exp(-4 gamma4)/(6 kappa2)"),
            Condition("eps_U", unc.eps_U, 0.25, "actuator error fraction at most 1/4"),
        ]

    return BoundsReport(
        lipschitz=lip,
        w0_norm=w0,
        wt0_norm=wt0,
        theta=float(theta),
        horizon=T,
        kappa1=kappa1,
        kappa2=kappa2,
        kappa3=kappa3,
        gamma1=gamma1,
        gamma1_tilde=gamma1_tilde,
        gamma2=gamma2,
        gamma3=gamma3,
        gamma4=gamma4,
        gamma5=gamma5,
        ctilde_prime_semiglobal=ctilde_sg,
        ctilde_prime_global=ctilde_global,
        ctilde_prime_D0=ctilde_D0,
        delta_max_nominal=delta_max_nominal,
        delta_bar_max=delta_bar_max,
        delta_bar_max1=delta_bar_max1,
        delta_max_robust=delta_max_robust,
        sigma=sigma,
        state_box=box,
        grid_density=int(density),
        uncertainty=unc,
        delta=None if delta is None else float(delta),
        conditions=tuple(conds),
    )


def epsilon_max(report: BoundsReport, kappa6: float, delta: float, epsilon_target: float, w0_norm: float | None = None) -> float:
    """Largest total uncertainty for which convergence to the ``epsilon_target`` ball is certified.

    ``kappa6`` is the (existential) amplification of the input error and must
    be supplied by the caller.
    """
    w0 = report.w0_norm if w0_norm is None else float(w0_norm)
    for name, value in (("kappa6", kappa6), ("delta", delta), ("epsilon_target", epsilon_target), ("w0_norm", w0)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value!r}")
    k1 = report.kappa1
    num = min(delta * report.sigma, epsilon_target / k1, k1 * w0)
    den = 2.0 * k1 * kappa6 * (k1 * w0 + 2.0 * report.l_Lambda_inv * report.delta_bar_max)
    return num / den


def epsilon_max_raw(
    kappa1: float, kappa6: float, delta: float, sigma: float, epsilon_target: float, w0_norm: float, l_Lambda_inv: float, delta_bar_max: float
) -> float:
    """The same formula with every ingredient passed explicitly."""
    num = min(delta * sigma, epsilon_target / kappa1, kappa1 * w0_norm)
    return num / (2.0 * kappa1 * kappa6 * (kappa1 * w0_norm + 2.0 * l_Lambda_inv * delta_bar_max))


__all__ = [
    "BoundsReport",
    "Condition",
    "Lemma1Bound",
    "UncertaintyBounds",
    "compute_report",
    "epsilon_max",
    "epsilon_max_raw",
    "lemma1_bound",
]
