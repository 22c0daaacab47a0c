"""Command-line front end.

Usage::

    artifact simulate      --config run.cfg --out results/
    artifact control       --config run.cfg --out results/
    artifact ensemble      --config run.cfg --runs 1024 --seed 7
    artifact bounds        --config run.cfg
    artifact predict-check --config run.cfg

The config file is line based: ``section.key = value`` with ``#`` comments.
Expressions should be quoted.  Without a ``model`` section the built-in
example is used (and announced on stderr).

Exit codes: 0 success, 1 numerical failure, 2 configuration or parse error.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .bounds import UncertaintyBounds, compute_report, epsilon_max
from .characteristics import HorizonError, PredictionError, predict
from .controller import ConfigError, ControllerConfig, ControllerError, run_closed_loop
from .model import (
    Coefficient,
    EXAMPLE_COEFFICIENTS,
    InitialData,
    ModelError,
    StateBox,
    SystemModel,
    builtin_example,
)
from .solver import CompatibilityError, ControlSignal, IntegrationError, StateGrid, integrate
from .uncertainty import CHANNELS, GROUPED_CHANNELS, SpecError, UncertaintySpec, run_ensemble

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2

_KEYS: dict[str, set[str]] = {
    "model": {"builtin", "name", "lambda_u", "lambda_v", "f_u", "f_v", "g_u", "g_v"},
    "initial": {"u0", "v0"},
    "controller": {"theta", "delta", "mode", "t_end", "reference", "reference_rate", "smoothing", "cfl", "fill_in"},
    "numerics": {"m", "tol", "backend"},
    "input": {"U"},
    "simulate": {"t_end", "dt"},
    "uncertainty": {
        "eps_Lambda",
        "eps_F",
        "eps_gu",
        "eps_gv",
        "eps_w",
        "eps_wt",
        "eps_U",
        "n_runs",
        "seed",
        "channels",
        "workers",
        "sample_dt",
    },
    "bounds": {"box", "density", "horizon", "delta", "kappa6", "epsilon", "wt0_norm"},
    "predict": {"amplitude", "period"},
    "output": {"dir", "dt"},
}


class CliConfigError(ValueError):
    """Malformed config file or option."""


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Parsed ``section.key = value`` entries plus command-line overrides."""

    values: dict[str, dict[str, str]] = field(default_factory=dict)
    source: str = "<defaults>"

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "RunConfig":
        values: dict[str, dict[str, str]] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = _strip_comment(raw).strip()
            if not line:
                continue
            if "=" not in line:
                raise CliConfigError(f"{source}:{lineno}: expected 'section.key = value'")
            lhs, rhs = (s.strip() for s in line.split("=", 1))
            if lhs.count(".") != 1:
                raise CliConfigError(f"{source}:{lineno}: key '{lhs}' must have the form section.key")
            section, key = lhs.split(".")
            if section not in _KEYS:
                raise CliConfigError(f"{source}:{lineno}: unknown section '{section}'")
            if key not in _KEYS[section]:
                raise CliConfigError(f"{source}:{lineno}: unknown key '{section}.{key}'")
            values.setdefault(section, {})[key] = _unquote(rhs, source, lineno)
        return cls(values, source)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise CliConfigError(f"cannot read config {p}: {exc}") from exc
        return cls.parse(text, str(p))

    def has(self, section: str, key: str | None = None) -> bool:
        if key is None:
            return section in self.values
        return key in self.values.get(section, {})

    def set(self, section: str, key: str, value: object) -> None:
        self.values.setdefault(section, {})[key] = str(value)

    def get(self, section: str, key: str, default: str | None = None) -> str | None:
        return self.values.get(section, {}).get(key, default)

    def number(self, section: str, key: str, default: float | None = None) -> float | None:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            value = float(raw)
        except ValueError as exc:
            raise CliConfigError(f"{section}.{key} must be a number, got {raw!r}") from exc
        if not math.isfinite(value):
            raise CliConfigError(f"{section}.{key} must be finite")
        return value

    def integer(self, section: str, key: str, default: int | None = None) -> int | None:
        value = self.number(section, key, None if default is None else float(default))
        if value is None:
            return None
        if value != int(value):
            raise CliConfigError(f"{section}.{key} must be an integer")
        return int(value)


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def _unquote(value: str, source: str, lineno: int) -> str:
    if value[:1] in "\"'":
        if len(value) < 2 or value[-1] != value[0]:
            raise CliConfigError(f"{source}:{lineno}: unterminated quoted value")
        return value[1:-1]
    return value


# ---------------------------------------------------------------------------
# building objects from a config
# ---------------------------------------------------------------------------


def _expr(text: str, what: str, allowed: set[str]) -> Coefficient:
    try:
        coeff = Coefficient.parse(text)
    except ex.ExprSyntaxError as exc:
        raise CliConfigError(f"{what}: {exc.message} at byte {exc.offset} in {text!r}") from exc
    extra = coeff.variables() - allowed
    if extra:
        raise CliConfigError(f"{what} may only use {sorted(allowed)}, found {sorted(extra)}")
    return coeff


def build_model(cfg: RunConfig, notes: list[str]) -> SystemModel:
    sec = cfg.values.get("model", {})
    builtin = sec.get("builtin")
    keys = ("lambda_u", "lambda_v", "f_u", "f_v", "g_u", "g_v")
    if builtin is not None or not any(k in sec for k in keys):
        name = builtin or "example"
        if name != "example":
            raise CliConfigError(f"unknown builtin model {name!r} (available: example)")
        if builtin is None:
            notes.append("no model section: using the builtin example")
        base = dict(EXAMPLE_COEFFICIENTS)
        base.update({k: sec[k] for k in keys if k in sec})
    else:
        missing = [k for k in keys[:5] if k not in sec]
        if missing:
            raise CliConfigError(f"model section lacks {', '.join('model.' + k for k in missing)}")
        base = {k: sec.get(k, "0") for k in keys}
    allowed = {"lambda_u": {"x", "u", "v"}, "lambda_v": {"x", "u", "v"}, "f_u": {"x", "u", "v"}, "f_v": {"x", "u", "v"}, "g_u": {"v", "t"}, "g_v": {"u", "t"}}
    coeffs = {k: _expr(base[k], f"model.{k}", allowed[k]) for k in keys}
    try:
        return SystemModel(**coeffs, name=sec.get("name", builtin or "model"))
    except ModelError as exc:
        raise CliConfigError(str(exc)) from exc


def build_initial(cfg: RunConfig, notes: list[str]) -> InitialData:
    u0 = cfg.get("initial", "u0")
    v0 = cfg.get("initial", "v0")
    if u0 is None and v0 is None:
        notes.append("no initial section: using u0 = v0 = 1")
        return builtin_example()[1]
    return InitialData(
        _expr(u0 if u0 is not None else "0", "initial.u0", {"x"}),
        _expr(v0 if v0 is not None else "0", "initial.v0", {"x"}),
    )


def _time_function(text: str, what: str) -> Callable[[float], float]:
    coeff = _expr(text, what, {"t"})
    return lambda t: float(coeff(0.0, 0.0, 0.0, t))


def build_controller(cfg: RunConfig) -> ControllerConfig:
    theta = cfg.number("controller", "theta", 0.25)
    delta = cfg.number("controller", "delta", 0.2)
    mode = cfg.get("controller", "mode", "stabilize")
    ref = cfg.get("controller", "reference")
    reference = _time_function(ref, "controller.reference") if ref is not None else None
    try:
        return ControllerConfig(
            theta=theta,
            delta=delta,
            mode=mode,
            reference=reference,
            reference_rate=cfg.number("controller", "reference_rate"),
            smoothing=cfg.number("controller", "smoothing", 1e-3),
            cfl=cfg.number("controller", "cfl", 0.5),
        )
    except ConfigError as exc:
        raise CliConfigError(str(exc)) from exc


def build_spec(cfg: RunConfig) -> UncertaintySpec:
    names = ("eps_Lambda", "eps_F", "eps_gu", "eps_gv", "eps_w", "eps_wt", "eps_U")
    kw = {n: cfg.number("uncertainty", n, 0.0) for n in names}
    chans = cfg.get("uncertainty", "channels", "split")
    if chans not in ("split", "grouped"):
        raise CliConfigError("uncertainty.channels must be 'split' or 'grouped'")
    try:
        return UncertaintySpec(**kw, channels=CHANNELS if chans == "split" else GROUPED_CHANNELS)
    except SpecError as exc:
        raise CliConfigError(str(exc)) from exc


def _numerics(cfg: RunConfig) -> tuple[int, float, str | None]:
    m = cfg.integer("numerics", "m", 100)
    tol = cfg.number("numerics", "tol", 1e-7)
    backend = cfg.get("numerics", "backend")
    if m is None or m < 2:
        raise CliConfigError("numerics.m must be at least 2")
    if not tol > 0:
        raise CliConfigError("numerics.tol must be positive")
    if backend not in (None, "numba", "numpy"):
        raise CliConfigError("numerics.backend must be 'numba' or 'numpy'")
    return m, tol, backend


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("output", "dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _output_times(cfg: RunConfig, t_end: float, default_dt: float = 0.05) -> np.ndarray:
    dt = cfg.number("output", "dt", default_dt)
    if not dt > 0:
        raise CliConfigError("output.dt must be positive")
    n = int(math.floor(t_end / dt + 1e-9))
    times = dt * np.arange(n + 1)
    if times[-1] < t_end - 1e-12:
        times = np.append(times, t_end)
    return times


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, notes: list[str]) -> int:
    model = build_model(cfg, notes)
    w0 = build_initial(cfg, notes)
    m, tol, backend = _numerics(cfg)
    t_end = cfg.number("simulate", "t_end", cfg.number("controller", "t_end", 5.0))
    if not t_end > 0:
        raise CliConfigError("simulate.t_end must be positive")
    text = cfg.get("input", "U")
    if text is None:
        raise CliConfigError("simulate needs an explicit input: input.U = \"...\" (a function of t)")
    coeff = _expr(text, "input.U", {"t"})
    if coeff.variables():
        n = max(2, int(math.ceil(t_end * 8 * m)))
        ts = np.linspace(0.0, t_end, n + 1)
        signal = ControlSignal(ts, np.asarray(coeff(0.0, 0.0, 0.0, ts), dtype=float))
    else:
        signal = ControlSignal.constant(float(coeff()), 0.0)
    try:
        traj = integrate(model, w0, signal, (0.0, t_end), m=m, tol=tol, mode=backend)
    except CompatibilityError as exc:
        raise CliConfigError(str(exc)) from exc
    out = _out_dir(cfg)
    dt = cfg.number("simulate", "dt", None)
    if dt is not None:
        cfg.set("output", "dt", dt)
    traj.to_csv(out / "trajectory.csv", _output_times(cfg, t_end))
    print(f"wrote {out / 'trajectory.csv'}")
    return EXIT_OK


def cmd_control(cfg: RunConfig, notes: list[str]) -> int:
    model = build_model(cfg, notes)
    w0 = build_initial(cfg, notes)
    config = build_controller(cfg)
    m, tol, backend = _numerics(cfg)
    t_end = cfg.number("controller", "t_end", 15.0)
    fill_in = cfg.get("controller", "fill_in", "extrapolate")
    try:
        res = run_closed_loop(model, w0, config, t_end, m=m, tol=tol, mode=backend, fill_in=fill_in)
    except ConfigError as exc:
        raise CliConfigError(str(exc)) from exc
    out = _out_dir(cfg)
    times = _output_times(cfg, t_end)
    res.trajectory.to_csv(out / "trajectory.csv", times)
    res.signal.to_csv(out / "input.csv")
    res.diagnostics_csv(out / "diagnostics.csv")
    res.boundary_csv(out / "boundary.csv", times)
    last = res.steps[-1]
    print(f"steps={len(res.steps)} final_norm={res.trajectory.norm_inf([t_end])[0]:.6e} last_v0k={last.v0k:.6e}")
    print(f"wrote trajectory.csv input.csv diagnostics.csv boundary.csv to {out}")
    return EXIT_OK


def cmd_ensemble(cfg: RunConfig, notes: list[str]) -> int:
    model = build_model(cfg, notes)
    w0 = build_initial(cfg, notes)
    config = build_controller(cfg)
    m, tol, backend = _numerics(cfg)
    spec = build_spec(cfg)
    n_runs = cfg.integer("uncertainty", "n_runs", 1024)
    if n_runs is None or n_runs < 2:
        raise CliConfigError("an ensemble needs uncertainty.n_runs >= 2")
    seed = cfg.integer("uncertainty", "seed", 0)
    t_end = cfg.number("controller", "t_end", 15.0)
    workers = cfg.integer("uncertainty", "workers")
    sample_dt = cfg.number("uncertainty", "sample_dt", 0.05)
    res = run_ensemble(
        model, w0, config, spec, n_runs, t_end, seed, m=m, tol=tol, sample_dt=sample_dt, workers=workers, mode=backend
    )
    out = _out_dir(cfg)
    res.percentiles_csv(out / "percentiles.csv")
    res.runs_csv(out / "runs.csv")
    print(
        f"runs={res.n_runs} failures={res.failure_count} ordered={res.is_ordered()} "
        f"max_final_norm={np.nanmax(res.final_norms):.6e}"
    )
    print(f"wrote percentiles.csv runs.csv to {out}")
    return EXIT_NUMERIC if res.failure_count else EXIT_OK


def cmd_bounds(cfg: RunConfig, notes: list[str]) -> int:
    model = build_model(cfg, notes)
    w0 = build_initial(cfg, notes)
    theta = cfg.number("controller", "theta", 0.25)
    density = cfg.integer("bounds", "density", 101)
    box_raw = cfg.number("bounds", "box")
    if box_raw is None:
        notes.append("no bounds.box: Lipschitz box set to 1.5 kappa1^2 ||w0|| by fixed-point iteration")
        box = None
    else:
        box = StateBox.symmetric(box_raw)
    if not cfg.has("bounds", "density"):
        notes.append(f"no bounds.density: using {density}")
    spec = build_spec(cfg) if cfg.has("uncertainty") else None
    unc = (
        UncertaintyBounds(spec.eps_Lambda, spec.eps_F, spec.eps_gu, spec.eps_gv, spec.eps_w, spec.eps_wt, spec.eps_U)
        if spec is not None
        else None
    )
    delta = cfg.number("bounds", "delta", cfg.number("controller", "delta"))
    w0n = w0.sup_norm()
    wt0 = cfg.number("bounds", "wt0_norm", 0.0)
    report = compute_report(
        model, (w0n, wt0), theta, box, density, uncertainty=unc, delta=delta, horizon=cfg.number("bounds", "horizon")
    )
    for n in notes:
        print(f"note: {n}")
    notes.clear()
    text = report.to_text()
    kappa6 = cfg.number("bounds", "kappa6")
    if kappa6 is not None:
        eps_target = cfg.number("bounds", "epsilon", 0.1)
        try:
            e = epsilon_max(report, kappa6, delta if delta is not None else 0.2, eps_target, w0n)
        except ValueError as exc:
            raise CliConfigError(str(exc)) from exc
        text += f"epsilon_max  {e!r}\n"
    sys.stdout.write(text)
    out = _out_dir(cfg)
    (out / "bounds.txt").write_text(text)
    report.to_csv(out / "bounds.csv")
    return EXIT_OK


def cmd_predict_check(cfg: RunConfig, notes: list[str]) -> int:
    model = build_model(cfg, notes)
    w0 = build_initial(cfg, notes)
    m, tol, backend = _numerics(cfg)
    grid = StateGrid.from_initial(w0, m, 0.0)
    residual = abs(float(grid.u[0] - model.boundary_u(grid.v[0], 0.0)))
    if residual > 10 * tol * max(1.0, grid.norm_inf()):
        raise CliConfigError(f"initial data violate u(0)=g_u(v(0)) by {residual:.3e}")
    amp = cfg.number("predict", "amplitude", 0.1)
    period = cfg.number("predict", "period", 1.0)
    if not period > 0:
        raise CliConfigError("predict.period must be positive")
    U_c = float(model.input_for_boundary(grid.v[-1], grid.u[-1], 0.0))
    first = predict(model, grid, 0.0, tol=tol, mode=backend)
    other = predict(model, grid, 0.0, tol=tol, mode=backend, fill_in=lambda t: U_c + amp * math.sin(2 * math.pi * t / period))
    diff = first.max_difference(other)
    threshold = 50 * tol
    worst = max(diff.values())
    for k in ("tau_v", "u", "v", "u_t"):
        print(f"max|d {k}| = {diff[k]:.6e}")
    verdict = "PASS" if worst <= threshold else "FAIL"
    print(f"{verdict}: max bundle discrepancy {worst:.6e} vs threshold {threshold:.6e}")
    out = _out_dir(cfg)
    first.to_csv(out / "bundle_hold.csv")
    other.to_csv(out / "bundle_alt.csv")
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig, list[str]], int]] = {
    "simulate": cmd_simulate,
    "control": cmd_control,
    "ensemble": cmd_ensemble,
    "bounds": cmd_bounds,
    "predict-check": cmd_predict_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artifact", description="Simulation and predictive boundary control of 2x2 hyperbolic systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="line-based config file")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="ensemble seed (overrides uncertainty.seed)")
        p.add_argument("--runs", type=int, help="ensemble size (overrides uncertainty.n_runs)")
        p.add_argument("--m", type=int, help="number of grid cells (overrides numerics.m)")
        p.add_argument("--tol", type=float, help="integrator tolerance (overrides numerics.tol)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    notes: list[str] = []
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        for flag, section, key in (
            ("out", "output", "dir"),
            ("seed", "uncertainty", "seed"),
            ("runs", "uncertainty", "n_runs"),
            ("m", "numerics", "m"),
            ("tol", "numerics", "tol"),
        ):
            value = getattr(args, flag)
            if value is not None:
                cfg.set(section, key, value)
        code = COMMANDS[args.command](cfg, notes)
    except (CliConfigError, ConfigError, SpecError, ModelError, ex.ExprSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, ControllerError, PredictionError, HorizonError, ex.ExprEvalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        for n in notes:
            print(f"note: {n}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
