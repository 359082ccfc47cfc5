"""Probabilistic PDE surrogates via conditional flow matching over function
space, with optional low-fidelity residual augmentation."""

from .grid import (Domain, GridFunction, GridError, mean_square_norm, mesh,
                   resample, rfft_nd, irfft_nd, uniform_grid)
from .random_fields import (KernelSpec, KKLBasis, RandomFieldError,
                            kernel_matrix, kkl_decompose, sample_gp,
                            sample_log_permeability)
from .problems import (Dataset, DegradeSpec, FieldSet, ICSpec, ProblemConfig,
                       SolverError, default_problem_config, generate_dataset,
                       gen_initial_condition, lift_input, solve_advection,
                       solve_burgers, solve_darcy, spectral_degrade)
from .autodiff import Tensor, no_grad
from .model import FilmFnoConfig, VectorFieldModel, model_forward
from .flow import (DEFAULT_PRIOR, CouplingSample, FlowMode, IntegrationError,
                   PathConfig, cfm_loss, generate_ensemble, integrate_flow,
                   integrate_ode, make_target, sample_path_point,
                   target_vector_field)
from .train import AdamState, TrainingError, adam_step, evaluate_loss, train
from .metrics import (EvalReport, SampleMetrics, crmse, ensemble_mean,
                      ensemble_std, evaluate_sample, evaluate_set, nrmse, rmse)
from .config import ConfigError, PRESETS, RunConfig, TrainConfig, get_preset
from . import dataio

__version__ = "0.1.0"

__all__ = [
    "Domain", "GridFunction", "GridError", "mean_square_norm", "mesh",
    "resample", "rfft_nd", "irfft_nd", "uniform_grid",
    "KernelSpec", "KKLBasis", "RandomFieldError", "kernel_matrix",
    "kkl_decompose", "sample_gp", "sample_log_permeability",
    "Dataset", "DegradeSpec", "FieldSet", "ICSpec", "ProblemConfig",
    "SolverError", "default_problem_config", "generate_dataset",
    "gen_initial_condition", "lift_input", "solve_advection", "solve_burgers",
    "solve_darcy", "spectral_degrade",
    "Tensor", "no_grad",
    "FilmFnoConfig", "VectorFieldModel", "model_forward",
    "DEFAULT_PRIOR", "CouplingSample", "FlowMode", "IntegrationError",
    "PathConfig",
    "cfm_loss", "generate_ensemble", "integrate_flow", "integrate_ode",
    "make_target", "sample_path_point", "target_vector_field",
    "AdamState", "TrainingError", "adam_step", "evaluate_loss", "train",
    "EvalReport", "SampleMetrics", "crmse", "ensemble_mean", "ensemble_std",
    "evaluate_sample", "evaluate_set", "nrmse", "rmse",
    "ConfigError", "PRESETS", "RunConfig", "TrainConfig", "get_preset",
    "dataio",
]
