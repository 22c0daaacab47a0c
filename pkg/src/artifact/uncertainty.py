"""Perturbed plants, corrupted measurements and the Monte-Carlo ensemble.

Uncertainty is multiplicative per channel: a realization holds one factor
``e`` per channel with ``|e| <= eps``, and the plant coefficient becomes
``(1 + e) * nominal``.  The reflection at ``x = 1`` is additive
(``g_v + e_gv * u``) because the nominal reflection is usually zero.

The default channel set has nine sign channels

    lambda_u, lambda_v, f_u, f_v, g_u, g_v, w_u, w_v, U

so the corner enumeration has 2**9 = 512 members.  The grouped set
``GROUPED_CHANNELS`` ties the speeds, the sources and the two measured
fields together and adds a (passive) ``w_t`` channel, which gives 2**7.
"""

from __future__ import annotations

import csv
import io
import math
import multiprocessing as mp
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels as kn
from .controller import ControllerConfig, ControllerError, run_closed_loop
from .characteristics import HorizonError, PredictionError
from .model import InitialData, ModelError, ModelFactors, SystemModel
from .solver import IntegrationError, StateGrid

CHANNELS: tuple[str, ...] = ("lambda_u", "lambda_v", "f_u", "f_v", "g_u", "g_v", "w_u", "w_v", "U")
GROUPED_CHANNELS: tuple[str, ...] = ("Lambda", "F", "g_u", "g_v", "w", "w_t", "U")

# which elementary factors each channel drives
_EXPANSION: dict[str, tuple[str, ...]] = {
    "lambda_u": ("lambda_u",),
    "lambda_v": ("lambda_v",),
    "Lambda": ("lambda_u", "lambda_v"),
    "f_u": ("f_u",),
    "f_v": ("f_v",),
    "F": ("f_u", "f_v"),
    "g_u": ("g_u",),
    "g_v": ("g_v",),
    "w_u": ("w_u",),
    "w_v": ("w_v",),
    "w": ("w_u", "w_v"),
    "w_t": (),
    "U": ("U",),
}


class SpecError(ValueError):
    """Invalid uncertainty specification."""


@dataclass(frozen=True)
class UncertaintySpec:
    """Bounds on the relative errors of each uncertainty class."""

    eps_Lambda: float = 0.0
    eps_F: float = 0.0
    eps_gu: float = 0.0
    eps_gv: float = 0.0
    eps_w: float = 0.0
    eps_wt: float = 0.0
    eps_U: float = 0.0
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self) -> None:
        for name in ("eps_Lambda", "eps_F", "eps_gu", "eps_gv", "eps_w", "eps_wt", "eps_U"):
            value = getattr(self, name)
            if not (value >= 0.0 and math.isfinite(value)):
                raise SpecError(f"{name} must be a nonnegative finite number")
        if self.eps_w > 1.0 or self.eps_wt > 1.0:
            raise SpecError("eps_w and eps_wt must not exceed 1")
        if self.eps_Lambda >= 1.0:
            raise SpecError("eps_Lambda must be below 1 to keep the speeds positive")
        unknown = [c for c in self.channels if c not in _EXPANSION]
        if unknown:
            raise SpecError(f"unknown channels {unknown}")
        covered = [e for c in self.channels for e in _EXPANSION[c]]
        if len(covered) != len(set(covered)):
            raise SpecError("channels overlap")

    @classmethod
    def example(cls) -> "UncertaintySpec":
        """Uncertainty levels of the reference ensemble study: 10% sources, 4% speeds and g_u, 2% for the rest."""
        return cls(eps_Lambda=0.04, eps_F=0.10, eps_gu=0.04, eps_gv=0.02, eps_w=0.02, eps_wt=0.02, eps_U=0.02)

    def bound(self, channel: str) -> float:
        return {
            "lambda_u": self.eps_Lambda,
            "lambda_v": self.eps_Lambda,
            "Lambda": self.eps_Lambda,
            "f_u": self.eps_F,
            "f_v": self.eps_F,
            "F": self.eps_F,
            "g_u": self.eps_gu,
            "g_v": self.eps_gv,
            "w_u": self.eps_w,
            "w_v": self.eps_w,
            "w": self.eps_w,
            "w_t": self.eps_wt,
            "U": self.eps_U,
        }[channel]

    def bounds(self) -> np.ndarray:
        return np.array([self.bound(c) for c in self.channels])

    @property
    def n_corners(self) -> int:
        return 2 ** len(self.channels)

    def check_certificate(self) -> None:
        """Extra restriction needed by the robustness certificate."""
        if self.eps_U > 0.25:
            raise SpecError("eps_U must not exceed 1/4 for the robustness certificate")

    def is_zero(self) -> bool:
        return not np.any(self.bounds() > 0)


@dataclass(frozen=True)
class Realization:
    """One draw of channel factors; ``kind`` is ``"corner"`` or ``"random"``."""

    run: int
    seed: int
    kind: str
    channels: tuple[str, ...]
    values: tuple[float, ...]

    def element(self, name: str) -> float:
        for ch, val in zip(self.channels, self.values):
            if name in _EXPANSION[ch]:
                return val
        return 0.0

    def factors(self) -> ModelFactors:
        e = self.element
        return ModelFactors(
            s_lambda_u=1.0 + e("lambda_u"),
            s_lambda_v=1.0 + e("lambda_v"),
            s_f_u=1.0 + e("f_u"),
            s_f_v=1.0 + e("f_v"),
            s_g_u=1.0 + e("g_u"),
            k_g_v=e("g_v"),
            s_U=1.0 + e("U"),
        )

    @property
    def eps_u(self) -> float:
        return self.element("w_u")

    @property
    def eps_v(self) -> float:
        return self.element("w_v")


def realization(spec: UncertaintySpec, run: int, seed: int) -> Realization:
    """Realization of run ``run``: sign corners first, then uniform draws.

    Corner ``r`` uses ``-eps`` for channel ``j`` when bit ``j`` of ``r`` is 0.
    Random runs draw from ``default_rng([seed, run])`` so each run is
    reproducible on its own.
    """
    eps = spec.bounds()
    if run < spec.n_corners:
        signs = np.array([1.0 if (run >> j) & 1 else -1.0 for j in range(len(spec.channels))])
        vals = signs * eps
        kind = "corner"
    else:
        rng = np.random.default_rng([int(seed), int(run)])
        vals = rng.uniform(-1.0, 1.0, size=eps.size) * eps
        kind = "random"
    return Realization(int(run), int(seed), kind, tuple(spec.channels), tuple(float(v) for v in vals))


def perturb_model(model: SystemModel, real: Realization | ModelFactors) -> SystemModel:
    """The plant seen through the realization's model factors."""
    fac = real.factors() if isinstance(real, Realization) else real
    for name in ("s_lambda_u", "s_lambda_v"):
        if getattr(fac, name) <= 0.0:
            raise ModelError(f"perturbation makes {name} nonpositive; speeds would lose hyperbolicity")
    return model.nominal().with_factors(fac)


def corrupt_measurement(
    W_k: StateGrid,
    eps_w_hat: float | tuple[float, float],
    U_continuity_value: float,
    model: SystemModel,
) -> StateGrid:
    """Scale the measured fields and restore boundary compatibility.

    ``u`` is scaled by ``1 + eps_u`` and ``v`` by ``1 + eps_v``.  Then an
    affine correction that vanishes at ``x = 1`` makes ``u(0) = g_u(v(0))``
    and one that vanishes at ``x = 0`` makes ``v(1) = U + g_v(u(1))``, both
    with the nominal model.
    """
    eu, ev = (eps_w_hat, eps_w_hat) if np.isscalar(eps_w_hat) else eps_w_hat
    nominal = model.nominal()
    x = W_k.x
    u = (1.0 + float(eu)) * W_k.u
    v = (1.0 + float(ev)) * W_k.v
    t = W_k.t
    dv = float(nominal.boundary_v(u[-1], U_continuity_value, t)) - v[-1]
    v = v + dv * x
    du = float(nominal.boundary_u(v[0], t)) - u[0]
    u = u + du * (1.0 - x)
    # pin the anchors exactly
    u[0] = float(nominal.boundary_u(v[0], t))
    v[-1] = float(nominal.boundary_v(u[-1], U_continuity_value, t))
    return StateGrid(u, v, t)


# ---------------------------------------------------------------------------
# ensemble
# ---------------------------------------------------------------------------

PERCENTILES = (1.0, 25.0, 50.0, 75.0, 99.0)


@dataclass
class EnsembleResult:
    """Per-time percentile curves of the state norm and per-run summaries."""

    times: np.ndarray
    percentiles: np.ndarray  # shape (len(PERCENTILES), len(times))
    norms: np.ndarray  # shape (n_runs, len(times)); NaN rows for failed runs
    final_norms: np.ndarray
    statuses: list[str]
    realizations: list[Realization]
    seed: int
    t_end: float

    @property
    def n_runs(self) -> int:
        return len(self.statuses)

    @property
    def failures(self) -> list[int]:
        return [i for i, s in enumerate(self.statuses) if s != "ok"]

    @property
    def failure_count(self) -> int:
        return len(self.failures)

    def percentile(self, q: float) -> np.ndarray:
        return self.percentiles[PERCENTILES.index(float(q))]

    def is_ordered(self) -> bool:
        finite = np.all(np.isfinite(self.percentiles), axis=0)
        p = self.percentiles[:, finite]
        return bool(np.all(np.diff(p, axis=0) >= 0.0))

    def percentiles_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write("t,p01,p25,p50,p75,p99\n")
        for j, t in enumerate(self.times):
            buf.write(",".join(f"{v:.12e}" for v in (t, *self.percentiles[:, j])) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def runs_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        channels = self.realizations[0].channels if self.realizations else ()
        writer.writerow(["run", *channels, "final_norm", "status"])
        for real, fn, st in zip(self.realizations, self.final_norms, self.statuses):
            writer.writerow([real.run, *(f"{v:.12e}" for v in real.values), f"{fn:.12e}", st])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


@dataclass(frozen=True)
class _Job:
    model: SystemModel
    w0: InitialData
    config: ControllerConfig
    spec: UncertaintySpec
    t_end: float
    seed: int
    m: int
    tol: float
    times: np.ndarray
    measured_initial: bool
    mode: str | None


_JOB: _Job | None = None


def _initial_grid(job: _Job, real: Realization) -> StateGrid:
    g = StateGrid.from_initial(job.w0, job.m, 0.0)
    if job.measured_initial:
        return StateGrid(g.u / (1.0 + real.eps_u), g.v / (1.0 + real.eps_v), 0.0)
    return g


def _run_one(run: int, job: _Job | None = None) -> tuple[int, np.ndarray, str]:
    job = job if job is not None else _JOB
    assert job is not None
    real = realization(job.spec, run, job.seed)
    eu, ev = real.eps_u, real.eps_v

    def measure(W: StateGrid, k: int, U_prev: float) -> StateGrid:
        return corrupt_measurement(W, (eu, ev), U_prev, job.model)

    try:
        plant = perturb_model(job.model, real)
        res = run_closed_loop(
            job.model,
            _initial_grid(job, real),
            job.config,
            job.t_end,
            m=job.m,
            tol=job.tol,
            plant_model=plant,
            measurement=measure,
            mode=job.mode,
            check_compatibility=False,
        )
        norms = res.trajectory.norm_inf(job.times)
        if not np.all(np.isfinite(norms)):
            return run, np.full(job.times.size, np.nan), "non-finite state"
        return run, norms, "ok"
    except (IntegrationError, ControllerError, PredictionError, HorizonError, ModelError, FloatingPointError) as exc:
        msg = f"{type(exc).__name__}: {exc}".replace(",", ";").replace("\n", " ")
        return run, np.full(job.times.size, np.nan), msg


def _pool_init(job: _Job) -> None:
    global _JOB
    _JOB = job


def run_ensemble(
    model: SystemModel,
    w0: InitialData,
    config: ControllerConfig,
    spec: UncertaintySpec,
    n_runs: int,
    t_end: float,
    seed: int = 0,
    *,
    m: int = 50,
    tol: float = 1e-7,
    sample_dt: float = 0.05,
    workers: int | None = None,
    measured_initial: bool = True,
    mode: str | None = None,
) -> EnsembleResult:
    """Run ``n_runs`` perturbed closed loops and collect norm percentiles.

    The controller always uses the nominal ``model``.  With
    ``measured_initial`` the plant starts from ``w0 / (1 + eps_w)`` per field
    so the first (corrupted) measurement equals ``w0``.  Failed runs are
    recorded in ``statuses`` and excluded from the percentiles.
    """
    if n_runs < 2:
        raise SpecError("an ensemble needs at least two runs")
    if not t_end > 0:
        raise SpecError("t_end must be positive")
    n = int(round(t_end / sample_dt))
    times = np.linspace(0.0, t_end, n + 1)
    job = _Job(model.nominal(), w0, config, spec, float(t_end), int(seed), int(m), float(tol), times, measured_initial, mode)
    kn.get_kernels(job.model, mode)  # compile once before any fork
    workers = (os.cpu_count() or 1) if workers is None else int(workers)
    runs = list(range(n_runs))
    if workers <= 1 or n_runs < 4:
        results = [_run_one(r, job) for r in runs]
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_pool_init, initargs=(job,)) as pool:
            results = pool.map(_run_one, runs, chunksize=max(1, n_runs // (8 * workers)))
    results.sort(key=lambda item: item[0])
    norms = np.vstack([r[1] for r in results])
    statuses = [r[2] for r in results]
    ok = np.array([s == "ok" for s in statuses])
    if np.any(ok):
        pct = np.percentile(norms[ok], PERCENTILES, axis=0, method="linear")
    else:
        pct = np.full((len(PERCENTILES), times.size), np.nan)
    return EnsembleResult(
        times=times,
        percentiles=pct,
        norms=norms,
        final_norms=norms[:, -1].copy(),
        statuses=statuses,
        realizations=[realization(spec, r, seed) for r in runs],
        seed=int(seed),
        t_end=float(t_end),
    )


__all__ = [
    "CHANNELS",
    "EnsembleResult",
    "GROUPED_CHANNELS",
    "PERCENTILES",
    "Realization",
    "SpecError",
    "UncertaintySpec",
    "corrupt_measurement",
    "perturb_model",
    "realization",
    "run_ensemble",
]
