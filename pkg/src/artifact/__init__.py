"""Simulation, prediction and sampled predictive boundary control of 2x2
quasilinear hyperbolic systems actuated at one boundary."""

from __future__ import annotations

from .bounds import BoundsReport, compute_report, epsilon_max, lemma1_bound
from .characteristics import PredictionBundle, predict, tau_u, tau_v, trace_xi
from .controller import ControllerConfig, run_closed_loop, solve_target_dynamics, virtual_input
from .expr import differentiate, evaluate, parse
from .model import InitialData, ModelFactors, SystemModel, builtin_example, estimate_lipschitz
from .solver import ControlSignal, StateGrid, Trajectory, integrate
from .uncertainty import UncertaintySpec, corrupt_measurement, perturb_model, run_ensemble

__version__ = "0.1.0"

__all__ = [
    "BoundsReport",
    "ControlSignal",
    "ControllerConfig",
    "InitialData",
    "ModelFactors",
    "PredictionBundle",
    "StateGrid",
    "SystemModel",
    "Trajectory",
    "UncertaintySpec",
    "builtin_example",
    "compute_report",
    "corrupt_measurement",
    "differentiate",
    "epsilon_max",
    "estimate_lipschitz",
    "evaluate",
    "integrate",
    "lemma1_bound",
    "parse",
    "perturb_model",
    "predict",
    "run_closed_loop",
    "run_ensemble",
    "solve_target_dynamics",
    "tau_u",
    "tau_v",
    "trace_xi",
    "virtual_input",
]
