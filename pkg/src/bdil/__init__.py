"""Bayesian domain-invariant learning on synthetic rotated domains."""

from .tensor import Tensor, constant, parameter, finite_difference_check
from .distributions import (Categorical, DiagGaussian, ScaleMixturePrior,
                            kl_categorical, kl_diag_gaussian, kl_posterior_prior_mc,
                            log_prob_mixture, sample_reparameterized)
from .layers import BayesianLinear, DeterministicLinear, propagate_moments, sample_weights
from .model import Network, NetworkConfig, VARIANT_FLAGS, build_network, predict_mc
from .objective import LossBreakdown, total_objective
from .train import Adam, TrainConfig, evaluate, run_ablation, sweep, train
from .data import Dataset, Episode, generate_blobs, make_rotated_domains, sample_episode

__version__ = "0.1.0"
