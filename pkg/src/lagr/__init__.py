"""Local adaptive grouped regularization for spatially varying coefficient models."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .design import Dataset, GroupLayout, LocalCoefficients, augment, estimate_sigma2, predict, wls_fit
from .errors import (ConfigurationError, DegenerateNeighborhoodError, InputError, LagrError, NonConvergenceError,
                     NumericalError, ParseError, SchemaError, SingularDesignError, TuningError)
from .glm import Family, fit_lagr_glm, fit_local_glm, get_family, local_quasi_likelihood, q_eval
from .kernels import (BandwidthSpec, KernelSpec, Location, WeightVector, adaptive_bandwidth, default_bandwidth,
                      kernel_moments, kernel_value, local_weights)
from .solver import FitResult, PenaltySpec, adaptive_penalties, fit_lagr, group_update, lagr_objective
from .surface import CoefficientSurface, FitConfig, fit_surface
from .tuning import AicRecord, GridSpec, TuningGrid, aic, df_hat, select_lambda, validate_lambda_rate

__all__ = [
    "BACKEND", "Dataset", "GroupLayout", "LocalCoefficients", "augment", "estimate_sigma2", "predict", "wls_fit",
    "ConfigurationError", "DegenerateNeighborhoodError", "InputError", "LagrError", "NonConvergenceError",
    "NumericalError", "ParseError", "SchemaError", "SingularDesignError", "TuningError",
    "Family", "fit_lagr_glm", "fit_local_glm", "get_family", "local_quasi_likelihood", "q_eval",
    "BandwidthSpec", "KernelSpec", "Location", "WeightVector", "adaptive_bandwidth", "default_bandwidth",
    "kernel_moments", "kernel_value", "local_weights",
    "FitResult", "PenaltySpec", "adaptive_penalties", "fit_lagr", "group_update", "lagr_objective",
    "CoefficientSurface", "FitConfig", "fit_surface",
    "AicRecord", "GridSpec", "TuningGrid", "aic", "df_hat", "select_lambda", "validate_lambda_rate",
]
