"""Hierarchical lognormal and two-component mixture models of reading
times: gradient-based MCMC fitting, K-fold predictive model comparison,
and simulation-based validation."""

from .crossval import (ElpdComparison, ElpdReport, compare, log_mean_exp,
                       pointwise_elpd, run_kfold)
from .data import (Condition, Dataset, FoldPlan, Trial, load_csv, load_folds,
                   make_folds, parse_condition, relabel, save_csv, save_folds,
                   sum_code)
from .errors import (AlignmentError, DataFormatError, FoldError,
                     InfeasibleSplitError, InitializationError, NumericalError,
                     RowError, RtmixError)
from .models import (LinearParams, MixtureParams, ParamLayout, constrain,
                     grad_log_posterior, layout_for, layout_for_dataset,
                     linear_pointwise_loglik, log_posterior, log_prior_linear,
                     log_prior_mixture, mixture_pointwise_loglik, unconstrain)
from .sampler import (Diagnostics, PosteriorDraws, SamplerConfig, diagnose,
                      ess, init_point, rhat, sample, sample_density)
from .simulate import (DesignSpec, LinearTruth, MixtureTruth, RecoveryReport,
                       gen_linear, gen_mixture, posterior_predictive,
                       recovery_check)

__all__ = [
    "AlignmentError", "Condition", "DataFormatError", "Dataset", "DesignSpec",
    "Diagnostics", "ElpdComparison", "ElpdReport", "FoldError", "FoldPlan",
    "InfeasibleSplitError", "InitializationError", "LinearParams",
    "LinearTruth", "MixtureParams", "MixtureTruth", "NumericalError",
    "ParamLayout", "PosteriorDraws", "RecoveryReport", "RowError",
    "RtmixError", "SamplerConfig", "Trial", "compare", "constrain", "diagnose",
    "ess", "gen_linear", "gen_mixture", "grad_log_posterior", "init_point",
    "layout_for", "layout_for_dataset", "linear_pointwise_loglik", "load_csv",
    "load_folds", "log_mean_exp", "log_posterior", "log_prior_linear",
    "log_prior_mixture", "make_folds", "mixture_pointwise_loglik",
    "parse_condition", "pointwise_elpd", "posterior_predictive",
    "recovery_check", "relabel", "rhat", "run_kfold", "sample",
    "sample_density", "save_csv", "save_folds", "sum_code", "unconstrain",
]

__version__ = "0.1.0"
