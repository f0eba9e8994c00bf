"""Variational-inequality fitting of value functions for KL-regularized diffusion control.

Modules
-------
diffusion   reference SDE specification and Euler-Maruyama path simulation
rewards     running and terminal rewards, observation noise, rescaling
dataset     off-policy observation datasets and their JSON-lines files
fnclass     ball-constrained linear function class over time-Legendre x spatial features
forms       empirical and population energy / bilinear forms
solver      proximal iteration in the Sobolev metric
oracle      Feynman-Kac Monte Carlo, OU closed form, manufactured problems
policy      plug-in policies, objective and KL estimates, mirror descent, baseline
cli         command line runner
"""

from .dataset import ObservationDataset, generate_dataset, load_dataset, save_dataset
from .diffusion import DiffusionSpec, ou_spec, simulate_paths
from .estimators import ClassifierGuidanceRegressor, FeatureMap, VIValueEstimator
from .fnclass import BasisSpec, ValueModel
from .forms import FormContext, QuadratureRule, assemble, empirical_bilinear, quadrature_bilinear, quadrature_energy
from .oracle import ClosedFormOU, OracleConfig, fk_gradient, fk_value, manufactured_problem, ou_closed_form
from .policy import (PolicyHandle, classifier_guidance_fit, estimate_objective, kl_path_estimate,
                     mirror_descent_step, policy_eval)
from .rewards import RewardSpec, rescale_problem
from .solver import FitReport, SolverConfig, fit, fit_population, prox_step

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "ClassifierGuidanceRegressor",
    "ClosedFormOU",
    "DiffusionSpec",
    "FeatureMap",
    "FitReport",
    "FormContext",
    "ObservationDataset",
    "OracleConfig",
    "PolicyHandle",
    "QuadratureRule",
    "RewardSpec",
    "SolverConfig",
    "VIValueEstimator",
    "ValueModel",
    "assemble",
    "classifier_guidance_fit",
    "empirical_bilinear",
    "estimate_objective",
    "fit",
    "fit_population",
    "fk_gradient",
    "fk_value",
    "generate_dataset",
    "kl_path_estimate",
    "load_dataset",
    "manufactured_problem",
    "mirror_descent_step",
    "ou_closed_form",
    "ou_spec",
    "policy_eval",
    "prox_step",
    "quadrature_bilinear",
    "quadrature_energy",
    "rescale_problem",
    "save_dataset",
    "simulate_paths",
]
