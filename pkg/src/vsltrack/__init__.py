"""Variable speed-limit control of LWR traffic on a single road."""

from .cost_variation import (CostReport, cost, fd_variation, locally_constant_steps, measure_integral,
                             needle_gradient, needle_variation, variation_vector)
from .letmap import LetTable, analytic_outflow, build_let, exit_time_offsets
from .model import (DensityField, DomainError, FluxParams, Signal, demand, flux, preset_signal,
                    projection, supply, total_variation)
from .policies import (PolicyResult, fixed_speed, gradient_descent, instantaneous_policy,
                       random_exploration)
from .problem import TrackingProblem
from .solver import ConfigError, SimulationError, SimulationTrace, SolverConfig, simulate, simulate_feedback

__all__ = [
    "ConfigError", "CostReport", "DensityField", "DomainError", "FluxParams", "LetTable", "PolicyResult",
    "Signal", "SimulationError", "SimulationTrace", "SolverConfig", "TrackingProblem", "analytic_outflow",
    "build_let", "cost", "demand", "exit_time_offsets", "fd_variation", "fixed_speed", "flux",
    "gradient_descent", "instantaneous_policy", "locally_constant_steps", "measure_integral",
    "needle_gradient", "needle_variation", "preset_signal", "projection", "random_exploration",
    "simulate", "simulate_feedback", "supply", "total_variation", "variation_vector",
]
