"""Strategy selection for quantized local SGD under a service-delay objective."""

from .baselines import BASELINES, AdaHSchedule, baseline
from .fitting import FitResult, Run, fit_coefficients, synthetic_runs
from .model import (
    ConvergenceCoeffs,
    FeasibleSets,
    Fleet,
    Strategy,
    convergence_margin,
    convergence_surrogate,
    deltas,
    evaluate_strategy,
    required_iterations,
)
from .pipeline import optimize
from .relaxed import RelaxedSolution, solve_geometric, solve_relaxed
from .search import brute_force, default_groups, round_and_repair

__all__ = [
    "AdaHSchedule", "BASELINES", "ConvergenceCoeffs", "FeasibleSets", "FitResult", "Fleet",
    "RelaxedSolution", "Run", "Strategy", "baseline", "brute_force", "convergence_margin",
    "convergence_surrogate", "default_groups", "deltas", "evaluate_strategy", "fit_coefficients",
    "optimize", "required_iterations", "round_and_repair", "solve_geometric", "solve_relaxed",
    "synthetic_runs",
]
