"""Pearson residuals in continuous GLMs, their O(1/n) density and corrections."""

from .exceptions import (
    ConvergenceError,
    DomainError,
    NumericalError,
    RankDeficientError,
    ResidualSupportWarning,
)
from .family import Gamma, InverseGaussian, Normal, get_family
from .glm import FitResult, ModelSpec, estimate_phi, irls_fit
from .link import get_link
from .residuals import (
    adjusted_moments,
    adjusted_residuals,
    conditional_moments,
    corrected_residuals,
    density_adjusted,
    density_pearson,
    pearson_residuals,
    residual_set,
    rho,
)
from .simulate import SimConfig, run_simulation

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DomainError", "NumericalError", "RankDeficientError",
    "ResidualSupportWarning", "Gamma", "InverseGaussian", "Normal", "get_family",
    "get_link", "FitResult", "ModelSpec", "estimate_phi", "irls_fit",
    "adjusted_moments", "adjusted_residuals", "conditional_moments",
    "corrected_residuals", "density_adjusted", "density_pearson",
    "pearson_residuals", "residual_set", "rho", "SimConfig", "run_simulation",
]
