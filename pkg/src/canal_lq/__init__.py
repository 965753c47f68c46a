"""Structured LQ control of irrigation canal strings."""
from .baseline_p import PController, p_gains
from .central_lq import ThirdOrderLQController, solve_dare, solve_lq
from .errors import ConfigurationError, ConvergenceError, ProtocolError
from .filters import design_butterworth, kalman_gain
from .harness import Disturbance, Scenario, SimTrace, evaluate_cost, run_scenario
from .ident import identify
from .plant import Plant, build_network, load_pool_table
from .structured import StructuredController, StructuredLoop, compute_params

__all__ = [
    "ConfigurationError", "ConvergenceError", "Disturbance", "PController", "Plant",
    "ProtocolError", "Scenario", "SimTrace", "StructuredController", "StructuredLoop",
    "ThirdOrderLQController", "build_network", "compute_params", "design_butterworth",
    "evaluate_cost", "identify", "kalman_gain", "load_pool_table", "p_gains", "run_scenario",
    "solve_dare", "solve_lq",
]
