"""Iterative bid adjustment in a DC power market: dispatch solvers, bid dynamics and robustness tools."""
from .dynamics import (
    IsoPolicy, MarketTrace, StepsizeSchedule, StoppingCriterion, audit_trace, compute_B, equilibrium,
    iteration_diagnostics, min_radius, run_baa, stopping_guarantee, ultimate_bound,
)
from .lp import InfeasibleError, LpSolution, enumerate_vertices, solve_sdcopf
from .network import (
    Bus, CaseError, Generator, Line, NetworkCase, build_matrices, get_preset, ieee9_modified,
    ieee9_light, load_case, total_load, validate_case,
)
from .opf import (
    DispatchSolution, PreconditionError, best_response, check_kkt, efficient_bid, nash_from_duals,
    payoff, solve_dcopf,
)
from .robustness import (
    DisturbanceModel, Strategy, estimate_umax, perturbed_bounds, run_collusion, run_deviation,
    run_perturbed,
)

__all__ = [
    "Bus",
    "CaseError",
    "DispatchSolution",
    "DisturbanceModel",
    "Generator",
    "InfeasibleError",
    "IsoPolicy",
    "Line",
    "LpSolution",
    "MarketTrace",
    "NetworkCase",
    "PreconditionError",
    "StepsizeSchedule",
    "StoppingCriterion",
    "Strategy",
    "audit_trace",
    "best_response",
    "build_matrices",
    "check_kkt",
    "compute_B",
    "efficient_bid",
    "enumerate_vertices",
    "equilibrium",
    "estimate_umax",
    "get_preset",
    "ieee9_modified",
    "ieee9_light",
    "iteration_diagnostics",
    "load_case",
    "min_radius",
    "nash_from_duals",
    "payoff",
    "perturbed_bounds",
    "run_baa",
    "run_collusion",
    "run_deviation",
    "run_perturbed",
    "solve_dcopf",
    "solve_sdcopf",
    "stopping_guarantee",
    "total_load",
    "ultimate_bound",
    "validate_case",
]

__version__ = "0.1.0"
