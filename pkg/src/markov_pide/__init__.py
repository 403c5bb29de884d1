"""Simulation, Monte Carlo estimation and PIDE solution for Markov-modulated
marked point processes X = (Z, L)."""
from .catalog import CATALOG, build_catalog_model
from .feynman_kac import (BayesReport, EstimatorResult, bayes_consistency,
                          estimate_v_physical, estimate_v_weighted)
from .model import (DeclaredBounds, MarkMeasure, ModelError, ModelSpec, SamplingBox,
                    SmoothFunction, ValidationReport, apply_generator, validate_assumptions)
from .pide import (GridSpec, PIDESolution, StabilityError, apply_integral_operator,
                   pide_residual, solve_frozen_pde, solve_pide, solve_pide_fixed_point,
                   solve_pide_imex)
from .simulate import (PathBatch, Trajectory, simulate_batch, simulate_physical_path,
                       simulate_reference_path)
from .verify import (ComparisonReport, compare_mc_pide, generator_dynkin_check,
                     regularity_probe)

__all__ = [
    "CATALOG", "build_catalog_model",
    "BayesReport", "EstimatorResult", "bayes_consistency", "estimate_v_physical",
    "estimate_v_weighted",
    "DeclaredBounds", "MarkMeasure", "ModelError", "ModelSpec", "SamplingBox",
    "SmoothFunction", "ValidationReport", "apply_generator", "validate_assumptions",
    "GridSpec", "PIDESolution", "StabilityError", "apply_integral_operator", "pide_residual",
    "solve_frozen_pde", "solve_pide", "solve_pide_fixed_point", "solve_pide_imex",
    "PathBatch", "Trajectory", "simulate_batch", "simulate_physical_path",
    "simulate_reference_path",
    "ComparisonReport", "compare_mc_pide", "generator_dynkin_check", "regularity_probe",
]
