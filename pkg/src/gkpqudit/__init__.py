"""Truncated-Fock simulation and analysis of finite-energy GKP qudits."""

__version__ = "0.1.0"

from . import channels, circuits, errors, fock, gkp, optimize, simulate, tomography
from .channels import NoiseModel, noise_preset
from .estimators import ExponentialDecayFitter, GaussianEnvelopeFitter
from .gkp import GkpCode, build_code, ideal_code
from .simulate import SimulationPlan, error_budget, run_memory_experiment, steady_state_rho

__all__ = [
    "__version__",
    "channels",
    "circuits",
    "errors",
    "fock",
    "gkp",
    "optimize",
    "simulate",
    "tomography",
    "NoiseModel",
    "noise_preset",
    "ExponentialDecayFitter",
    "GaussianEnvelopeFitter",
    "GkpCode",
    "build_code",
    "ideal_code",
    "SimulationPlan",
    "error_budget",
    "run_memory_experiment",
    "steady_state_rho",
]
