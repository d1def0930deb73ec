"""Wong-Zakai approximation of backward doubly stochastic differential equations."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BdsdeError,
    CapabilityError,
    ConfigurationError,
    DomainError,
    InputError,
    LevelError,
    NumericalBlowupError,
    NumericalError,
    RateUndefinedError,
    RegressionError,
)
from .noise import DyadicGrid, InterpolatedNoise, sample_ensemble, sample_pair  # noqa: E402
from .problem import BdsdeProblem, make_problem  # noqa: E402
from .engine import RegressionBasis, solve, solve_coupled  # noqa: E402
from .lab import ExperimentPlan, estimate_errors, fit_rate, identity_suite, moment_bounds  # noqa: E402
