"""Continuous-time deep learning on numpy: neural ODE classifiers, normalizing
flows and mean field games with exact discrete gradients."""

from .classify import ClassifierModel, classify_loss, probe_margin, train_classifier
from .cnf import CnfModel, cnf_logdensity, cnf_loss, cnf_sample, straightness, train_cnf
from .distributions import GaussianMixture, LabeledDataset, ObstacleCost, make_circles, mixture_logpdf, mixture_sample
from .dynamics import FieldSpec, ValueNetSpec
from .mfg import MfgScenario, hamiltonian, mfg_objective, simulate_agents, train_mfg
from .odeint import AugmentedState, FieldHook, LinearHook, Trajectory, backprop_trajectory, integrate, invert_map
from .params import OptState, ParamVector, adam_step, grad_check

__version__ = "0.1.0"

__all__ = [
    "AugmentedState", "ClassifierModel", "CnfModel", "FieldHook", "FieldSpec", "GaussianMixture",
    "LabeledDataset", "LinearHook", "MfgScenario", "ObstacleCost", "OptState", "ParamVector", "Trajectory",
    "ValueNetSpec", "adam_step", "backprop_trajectory", "classify_loss", "cnf_logdensity", "cnf_loss",
    "cnf_sample", "grad_check", "hamiltonian", "integrate", "invert_map", "make_circles", "mixture_logpdf",
    "mixture_sample", "mfg_objective", "probe_margin", "simulate_agents", "straightness", "train_classifier",
    "train_cnf", "train_mfg",
]
