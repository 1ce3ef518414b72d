"""Early-stopped averaged gradient descent for linear inverse problems in a diagonal spectral model."""

from .estimators import SpectralGDRegressor, SpectralRidgeRegressor
from .harness import ExperimentConfig, ExperimentReport, default_config, load_config, run_experiment
from .simulate import (
    Dataset,
    GDConfig,
    NoiseModel,
    Trajectory,
    filter_gd,
    gd_run,
    population_gd,
    sample_dataset,
)
from .spectral_core import Basis, DivergenceError, FunctionCoeffs, Spectrum, SpectrumSpec, power_norm
from .theory_bounds import Regime, StoppingPlan, rate_exponent, regime_classify, stopping_schedule

__version__ = "0.1.0"

__all__ = [
    "Basis",
    "Dataset",
    "DivergenceError",
    "ExperimentConfig",
    "ExperimentReport",
    "FunctionCoeffs",
    "GDConfig",
    "NoiseModel",
    "Regime",
    "SpectralGDRegressor",
    "SpectralRidgeRegressor",
    "Spectrum",
    "SpectrumSpec",
    "StoppingPlan",
    "Trajectory",
    "default_config",
    "filter_gd",
    "gd_run",
    "load_config",
    "population_gd",
    "power_norm",
    "rate_exponent",
    "regime_classify",
    "run_experiment",
    "sample_dataset",
    "stopping_schedule",
]
