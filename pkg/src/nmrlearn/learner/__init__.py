"""Maximum-likelihood fitting of Hamiltonian parameters to time-resolved signals."""

from .derivatives import SpectralEngine, hessian_K, hessian_integrand, jacobian, jacobian_integrand
from .experiments import ExperimentSpec, SignalSet, StateSpec, correlator_experiments, synthesize_signal
from .fit import FitOptions, FitReport, fit, robust_schedule, staged_fit
from .model import HamiltonianModel, Term
from .objective import cost, covariance, gradient, hessian_full, hessian_gauss_newton, residuals
from .quadrature import QuadratureRule

__all__ = [
    "ExperimentSpec",
    "FitOptions",
    "FitReport",
    "HamiltonianModel",
    "QuadratureRule",
    "SignalSet",
    "SpectralEngine",
    "StateSpec",
    "Term",
    "correlator_experiments",
    "cost",
    "covariance",
    "fit",
    "gradient",
    "hessian_K",
    "hessian_full",
    "hessian_gauss_newton",
    "hessian_integrand",
    "jacobian",
    "jacobian_integrand",
    "residuals",
    "robust_schedule",
    "staged_fit",
    "synthesize_signal",
]
