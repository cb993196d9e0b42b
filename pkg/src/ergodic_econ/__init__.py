"""Ergodicity economics toolkit: wealth-process simulation, ergodic transforms,
growth-rate diagnostics, time-average preferences and Copenhagen Experiment agents."""

__version__ = "0.1.0"

from .swp_core import (DiscreteDynamics, Ensemble, ItoDynamics, build_ito, gbm, gbm_log_growth,
                       simulate_discrete, simulate_ito)
from .ergodic_transform import TransformSpec, check_ergodizable, crra, derive_transform, log_transform
from .growth_rates import Budget, Verdict, ergodicity_diagnostic, time_average_rate
from .preference_engine import rank, representation_value, unique_alpha_star

__all__ = [
    "__version__",
    "DiscreteDynamics", "Ensemble", "ItoDynamics", "build_ito", "gbm", "gbm_log_growth",
    "simulate_discrete", "simulate_ito",
    "TransformSpec", "check_ergodizable", "crra", "derive_transform", "log_transform",
    "Budget", "Verdict", "ergodicity_diagnostic", "time_average_rate",
    "rank", "representation_value", "unique_alpha_star",
]
