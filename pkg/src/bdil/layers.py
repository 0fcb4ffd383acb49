"""Deterministic and variational linear layers.

A Bayesian layer stores per-weight posterior parameters (mu, rho) with
std = softplus(rho), samples weights by reparameterization, and can
push an input batch through its posterior analytically to get the
exact Gaussian over pre-activations.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, constant, parameter, ShapeError
from .distributions import DiagGaussian, DomainError, log_prob_mixture

CHECKPOINT_MAGIC = "bdil-params"
CHECKPOINT_VERSION = 1


def softplus_inv(y):
    """Inverse of log(1 + exp(x)); valid for y > 0."""
    return math.log(math.expm1(y))


@dataclass
class RealizedWeights:
    """One reparameterized draw of a Bayesian layer's weights."""

    w: Tensor
    b: Tensor
    eps_w: np.ndarray
    eps_b: np.ndarray


class DeterministicLinear:
    def __init__(self, in_dim, out_dim, rng):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"invalid layer dims {in_dim}x{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w = parameter(rng.normal(0.0, math.sqrt(1.0 / in_dim), size=(in_dim, out_dim)))
        self.b = parameter(np.zeros(out_dim))

    def forward(self, x):
        return x @ self.w + self.b

    def parameters(self):
        return [self.w, self.b]

    def named_parameters(self):
        return [("w", self.w), ("b", self.b)]


class BayesianLinear:
    """Linear layer with a factorized Gaussian posterior over weights and
    biases; sigma = softplus(rho) > 0 by construction."""

    def __init__(self, in_dim, out_dim, rng, init_sigma=0.05):
        if in_dim < 1 or out_dim < 1:
            raise ShapeError(f"invalid layer dims {in_dim}x{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        rho0 = softplus_inv(init_sigma)
        self.w_mu = parameter(rng.normal(0.0, math.sqrt(1.0 / in_dim), size=(in_dim, out_dim)))
        self.w_rho = parameter(np.full((in_dim, out_dim), rho0))
        self.b_mu = parameter(np.zeros(out_dim))
        self.b_rho = parameter(np.full(out_dim, rho0))

    def parameters(self):
        return [self.w_mu, self.w_rho, self.b_mu, self.b_rho]

    def named_parameters(self):
        return [("w_mu", self.w_mu), ("w_rho", self.w_rho),
                ("b_mu", self.b_mu), ("b_rho", self.b_rho)]

    def w_sigma(self):
        return self.w_rho.softplus()

    def b_sigma(self):
        return self.b_rho.softplus()

    def n_weights(self):
        return self.w_mu.size + self.b_mu.size


def sample_weights(layer, rng, eps_w=None, eps_b=None):
    """Draw one weight realization w = mu + eps * softplus(rho).

    Pass stored eps arrays to replay a draw bit-exactly.
    """
    if eps_w is None:
        eps_w = rng.standard_normal((layer.in_dim, layer.out_dim))
    if eps_b is None:
        eps_b = rng.standard_normal(layer.out_dim)
    w = layer.w_mu + constant(eps_w) * layer.w_sigma()
    b = layer.b_mu + constant(eps_b) * layer.b_sigma()
    return RealizedWeights(w=w, b=b, eps_w=eps_w, eps_b=eps_b)


def sample_weights_batched(layer, rng, count, eps_w=None, eps_b=None):
    """Draw `count` weight realizations stacked along a leading axis.

    Returns (w_all [count,in,out], b_all [count,out], eps_w, eps_b).
    """
    if count < 1:
        raise DomainError(f"need at least one sample, got {count}")
    if eps_w is None:
        eps_w = rng.standard_normal((count, layer.in_dim, layer.out_dim))
    if eps_b is None:
        eps_b = rng.standard_normal((count, layer.out_dim))
    w_all = layer.w_mu + constant(eps_w) * layer.w_sigma()
    b_all = layer.b_mu + constant(eps_b) * layer.b_sigma()
    return w_all, b_all, eps_w, eps_b


def mean_weights(layer):
    """Degenerate draw at the posterior mean (eps frozen at 0), shaped
    like a single batched sample."""
    zw = np.zeros((1, layer.in_dim, layer.out_dim))
    zb = np.zeros((1, layer.out_dim))
    return layer.w_mu + constant(zw), layer.b_mu + constant(zb), zw, zb


def forward_sampled(weights, x):
    """Per-sample forward pass x @ w + b for one realized draw."""
    x = as_tensor(x)
    if x.shape[-1] != weights.w.shape[-2]:
        raise ShapeError(f"input width {x.shape} does not match weights {weights.w.shape}")
    return x @ weights.w + weights.b


def propagate_moments(layer, x):
    """Exact Gaussian over pre-activations for a factorized posterior:
    mean = x @ w_mu + b_mu, var = x^2 @ sigma_w^2 + sigma_b^2."""
    x = as_tensor(x)
    if x.shape[-1] != layer.in_dim:
        raise ShapeError(f"input width {x.shape[-1]} != layer in_dim {layer.in_dim}")
    mean = x @ layer.w_mu + layer.b_mu
    var = x.square() @ layer.w_sigma().square() + layer.b_sigma().square()
    return DiagGaussian(mean, var.sqrt())


def layer_prior_kl(layer, prior, samples):
    """MC estimate of KL[q(layer) || prior] from realized weight draws."""
    if not samples:
        raise DomainError("empty sample list")
    total = None
    for rw in samples:
        logq = _gaussian_log_prob(rw.w, layer.w_mu, layer.w_sigma()) \
            + _gaussian_log_prob(rw.b, layer.b_mu, layer.b_sigma())
        logp = log_prob_mixture(rw.w, prior) + log_prob_mixture(rw.b, prior)
        term = logq - logp
        total = term if total is None else total + term
    return total / float(len(samples))


def layer_prior_kl_batched(layer, prior, w_all, b_all):
    """Same estimate from batched draws [L, in, out] / [L, out]."""
    count = w_all.shape[0]
    logq = _gaussian_log_prob(w_all, layer.w_mu, layer.w_sigma()) \
        + _gaussian_log_prob(b_all, layer.b_mu, layer.b_sigma())
    logp = log_prob_mixture(w_all, prior) + log_prob_mixture(b_all, prior)
    return (logq - logp) / float(count)


def _gaussian_log_prob(value, mean, std):
    z = (value - mean) / std
    return (z.square() * -0.5 - std.log() - 0.5 * math.log(2.0 * math.pi)).sum()


# ---- parameter serialization ---------------------------------------


def write_param_block(fh, name, tensor):
    shape = " ".join(str(s) for s in tensor.shape)
    fh.write(f"param {name} {shape}\n")
    fh.write(" ".join(repr(float(v)) for v in tensor.data.reshape(-1)) + "\n")


def read_param_block(lines, pos):
    """Parse one `param` block; returns (name, ndarray, next_pos)."""
    header = lines[pos].split()
    if not header or header[0] != "param":
        raise ValueError(f"expected a param block at line {pos + 1}, got: {lines[pos]!r}")
    name = header[1]
    shape = tuple(int(s) for s in header[2:])
    values = np.array([float(v) for v in lines[pos + 1].split()], dtype=np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if values.size != expected:
        raise ValueError(f"param {name}: expected {expected} values, got {values.size}")
    return name, values.reshape(shape), pos + 2
