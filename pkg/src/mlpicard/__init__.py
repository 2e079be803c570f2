"""Multilevel Picard solvers for semilinear parabolic terminal-value
problems, with reproducible splittable random streams, Gauss-Legendre
time quadrature, a-priori error bounds, and a deterministic d=1 oracle.
"""

from .analysis import (MissingBoundsError, OracleUnavailableError, RunStats,
                       TheoremBound, TheoremNotApplicableError,
                       deterministic_picard, run_replications, theorem_bound)
from .mlp import (CostCounters, Estimate, InvalidTimeError, MlpConfig,
                  PairEstimate, estimate, estimate_modified,
                  estimate_original, paired_recursion)
from .problems import (AnalyticSolution, BsdeProblem, ProblemBounds,
                       ValidationEntry, builtin_problems, make_problem,
                       pde_residual, problem_names, validate_assumptions)
from .quadrature import (DegenerateIntervalError, InvalidOrderError,
                         NonFiniteIntegrandError, QuadratureRule, build_rule,
                         integrate, legendre_roots, quadrature_error_bound)
from .sampling import (GaussianIncrement, GaussianStream,
                       InvalidVarianceError, StreamKey, child_key,
                       draw_increment)

__version__ = "0.1.0"

__all__ = [
    "AnalyticSolution",
    "BsdeProblem",
    "CostCounters",
    "DegenerateIntervalError",
    "Estimate",
    "GaussianIncrement",
    "GaussianStream",
    "InvalidOrderError",
    "InvalidTimeError",
    "InvalidVarianceError",
    "MissingBoundsError",
    "MlpConfig",
    "NonFiniteIntegrandError",
    "OracleUnavailableError",
    "PairEstimate",
    "ProblemBounds",
    "QuadratureRule",
    "RunStats",
    "StreamKey",
    "TheoremBound",
    "TheoremNotApplicableError",
    "ValidationEntry",
    "builtin_problems",
    "build_rule",
    "child_key",
    "deterministic_picard",
    "draw_increment",
    "estimate",
    "estimate_modified",
    "estimate_original",
    "integrate",
    "legendre_roots",
    "make_problem",
    "paired_recursion",
    "pde_residual",
    "problem_names",
    "quadrature_error_bound",
    "run_replications",
    "theorem_bound",
    "validate_assumptions",
    "__version__",
]
