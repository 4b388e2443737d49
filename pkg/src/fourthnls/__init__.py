"""Fourth-order nonlinear Schrodinger equation on periodic boxes.

Pseudospectral linear group, polynomial nonlinearity DSL, cube-wise
space-time norms, a Duhamel/Picard local solver, and numerical checks of
the linear estimates the contraction argument relies on.
"""

__version__ = "0.1.0"

from .spectral import Epsilon, Field, Grid, gaussian, propagate
from .nonlinearity import ParseError, PolynomialNonlinearity, evaluate, parse
from .norms import CubeDecomposition, SpaceTimeTrace, linear_trace
from .solver import SolverConfig, SolverError, solve_picard, solve_splitstep
from .estimators import LinearPropagator, PicardSolver, PowerLawFit, SplitStepSolver

__all__ = [
    "__version__",
    "Epsilon",
    "Field",
    "Grid",
    "gaussian",
    "propagate",
    "ParseError",
    "PolynomialNonlinearity",
    "evaluate",
    "parse",
    "CubeDecomposition",
    "SpaceTimeTrace",
    "linear_trace",
    "SolverConfig",
    "SolverError",
    "solve_picard",
    "solve_splitstep",
    "LinearPropagator",
    "PicardSolver",
    "PowerLawFit",
    "SplitStepSolver",
]
