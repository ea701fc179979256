"""Mean-field multilevel Monte Carlo for interacting particle systems."""

from .diagnostics import (ComplexityResult, StudyConfig, StudyRow, complexity_study,
                          convergence_study, variance_scaling_study)
from .engine import (ConfigurationError, ContractViolationError, CoupledEnsemble,
                     DivergenceError, EngineConfig, LevelReport, MeanFieldSeries,
                     RunawayRefinementError, RunResult, coarsen_increments,
                     compute_sample_counts, estimate_levels_initial,
                     estimate_levels_update, interpolate, run_algorithm,
                     run_coupled_level, run_frozen_ensemble, run_level0,
                     sampling_error_estimate)
from .models import (LinearModelParams, ModelSpec, RotatorModelParams,
                     linear_exact_moments, make_linear_model, make_pic_model,
                     make_rotator_model)
from .pic import GridSpec, deposit, deposit_density, interpolate_field, solve_field
from .single_level import (SingleLevelConfig, generate_reference, load_reference,
                           run_single_level)

__version__ = "0.1.0"

__all__ = [
    "ComplexityResult", "ConfigurationError", "ContractViolationError",
    "CoupledEnsemble", "DivergenceError", "EngineConfig", "GridSpec",
    "LevelReport", "LinearModelParams", "MeanFieldSeries", "ModelSpec",
    "RotatorModelParams", "RunResult", "RunawayRefinementError",
    "SingleLevelConfig", "StudyConfig", "StudyRow", "coarsen_increments",
    "complexity_study", "compute_sample_counts", "convergence_study", "deposit",
    "deposit_density", "estimate_levels_initial", "estimate_levels_update",
    "generate_reference", "interpolate", "interpolate_field",
    "linear_exact_moments", "load_reference", "make_linear_model",
    "make_pic_model", "make_rotator_model", "run_algorithm", "run_coupled_level",
    "run_frozen_ensemble", "run_level0", "run_single_level",
    "sampling_error_estimate", "solve_field", "variance_scaling_study",
]
