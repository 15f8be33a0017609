"""Copula-like variational families with exact reparameterization gradients."""

__version__ = "0.1.0"

from .exceptions import ConfigurationError, DomainError, NotFittedError, NumericalError
from .copula import FlipMask, ThetaParams, log_density_ctheta
from .families import (KINDS, FamilySpec, family_log_density, family_sample, init_family,
                       load_family, save_family)
from .elbo import TrainConfig, elbo_gradient, estimate_elbo, fit
from .targets import (gaussian_target, generate_synthetic_logistic, horseshoe_posterior,
                      logistic_posterior, tiny_bnn_regression)
from .estimator import VariationalEstimator

__all__ = [
    "ConfigurationError", "DomainError", "NotFittedError", "NumericalError",
    "FlipMask", "ThetaParams", "log_density_ctheta",
    "KINDS", "FamilySpec", "family_log_density", "family_sample", "init_family",
    "load_family", "save_family",
    "TrainConfig", "elbo_gradient", "estimate_elbo", "fit",
    "gaussian_target", "generate_synthetic_logistic", "horseshoe_posterior",
    "logistic_posterior", "tiny_bnn_regression",
    "VariationalEstimator",
]
