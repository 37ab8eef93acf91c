"""Scaling laws of one-pass SGD on power-law random features."""

from .core import (
    ConfigError,
    LossCurve,
    NumericalError,
    ProblemInstance,
    ProblemSpec,
    flops,
    make_problem,
    population_risk,
)
from .frontier import FrontierFit, approach0, approach1, approach2, frontier_eta, isoflop_slices
from .scaling_theory import classify_phase, surrogate_loss, theory_exponents
from .sgd_sim import CheckpointSchedule, default_learning_rate, run_sgd, run_sgd_replicates
from .spectrum import solve_kappa, solve_m, weighted_density
from .volterra import SpectralModes, empirical_modes, kernel_norm, solve_volterra, streamed_modes

__all__ = [
    "CheckpointSchedule", "ConfigError", "FrontierFit", "LossCurve", "NumericalError",
    "ProblemInstance", "ProblemSpec", "SpectralModes", "approach0", "approach1", "approach2",
    "classify_phase", "default_learning_rate", "empirical_modes", "flops", "frontier_eta",
    "isoflop_slices", "kernel_norm", "make_problem", "population_risk", "run_sgd",
    "run_sgd_replicates", "solve_kappa", "solve_m", "solve_volterra", "streamed_modes",
    "surrogate_loss", "theory_exponents", "weighted_density",
]
