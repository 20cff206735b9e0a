"""Bayesian spatial regression with SPDE/GMRF and low-rank thin plate spline effects.

Models are sampled with a NUTS implementation and checked with rank-normalised
R-hat, bulk ESS and PSIS-LOO.
"""

from .diagnostics import (convergence_report, ess_bulk, loo_compare, posterior_predictive,
                          psis_loo, split_rhat)
from .errors import ConvergenceFailure, InputError, NumericalError, SpatialError
from .experiments import Fit, fit_model, predict_experiment, run_experiment
from .models import Dataset, ModelSpec, Posterior, Prior, model_spec
from .nuts import DrawMatrix, SamplerConfig, run_chains
from .simulate import CpueConfig, SimulationConfig, simulate, synth_cpue

__version__ = "0.1.0"

__all__ = [
    "convergence_report", "ess_bulk", "loo_compare", "posterior_predictive", "psis_loo",
    "split_rhat", "ConvergenceFailure", "InputError", "NumericalError", "SpatialError",
    "Fit", "fit_model", "predict_experiment", "run_experiment", "Dataset", "ModelSpec",
    "Posterior", "Prior", "model_spec", "DrawMatrix", "SamplerConfig", "run_chains",
    "CpueConfig", "SimulationConfig", "simulate", "synth_cpue",
]
