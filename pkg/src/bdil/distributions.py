"""Probability primitives: diagonal Gaussians, categoricals, the
scale-mixture weight prior, and the KL divergences built on them.

All densities are differentiable through the tensor engine. Batched
variants treat the last axis as the event dimension and return one KL
value per leading index.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, constant, ShapeError, DomainError

LOG_2PI = math.log(2.0 * math.pi)
PROB_FLOOR = 1e-12  # floor inside categorical logs; keeps 0*log(0) = 0


class DiagGaussian:
    """Factorized Gaussian with strictly positive std.

    mean/std may carry leading batch axes; the last axis is the event
    dimension.
    """

    def __init__(self, mean, std):
        self.mean = as_tensor(mean)
        self.std = as_tensor(std)
        if self.mean.shape != self.std.shape:
            raise ShapeError(f"mean/std shapes differ: {self.mean.shape} vs {self.std.shape}")
        if np.any(self.std.data <= 0.0):
            raise DomainError("DiagGaussian std must be strictly positive")

    @property
    def dim(self):
        return self.mean.shape[-1] if self.mean.ndim else 1

    def take(self, indices, axis=0):
        return DiagGaussian(self.mean.take(indices, axis=axis), self.std.take(indices, axis=axis))

    def log_prob(self, value):
        """Total log density of `value` (sum over all entries)."""
        value = as_tensor(value)
        z = (value - self.mean) / self.std
        return (z.square() * -0.5 - self.std.log() - 0.5 * LOG_2PI).sum()


@dataclass(frozen=True)
class ScaleMixturePrior:
    """Two-component zero-mean Gaussian mixture over weights."""

    pi: float = 0.5
    sigma1: float = 0.1
    sigma2: float = 1.5

    def __post_init__(self):
        if not (0.0 < self.pi < 1.0):
            raise DomainError(f"mixing weight must be in (0,1), got {self.pi}")
        if self.sigma1 <= 0.0 or self.sigma2 <= 0.0:
            raise DomainError("mixture component stds must be positive")


class Categorical:
    """Discrete distribution stored with both probs and log-probs."""

    def __init__(self, probs, log_probs):
        self.probs = as_tensor(probs)
        self.log_probs = as_tensor(log_probs)
        total = self.probs.data.sum(axis=-1)
        if np.any(np.abs(total - 1.0) > 1e-9):
            raise DomainError("categorical probs must sum to 1")
        if np.any(self.probs.data < 0.0):
            raise DomainError("categorical probs must be non-negative")

    @classmethod
    def from_logits(cls, logits):
        logits = as_tensor(logits)
        lse = logits.logsumexp(axis=-1)
        lp = logits - lse.reshape(lse.shape + (1,))
        return cls(lp.exp(), lp)

    @classmethod
    def from_probs(cls, probs):
        probs = as_tensor(probs)
        return cls(probs, probs.clip_min(PROB_FLOOR).log())

    @property
    def n_classes(self):
        return self.probs.shape[-1]


def kl_diag_gaussian(p, q):
    """Closed-form KL[p || q] between diagonal Gaussians, summed over the
    event axis. Returns a scalar for 1-D inputs, a batch tensor otherwise."""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ShapeError(f"dimension mismatch: {p.mean.shape} vs {q.mean.shape}")
    ratio = q.std.log() - p.std.log()
    quad = (p.std.square() + (p.mean - q.mean).square()) / (q.std.square() * 2.0)
    return (ratio + quad - 0.5).sum(axis=-1)


def kl_categorical(p, q):
    """KL[p || q] over the last axis with the probability floor applied
    inside both logs (0 * log 0 := 0 by exact-zero multiplication)."""
    if p.n_classes != q.n_classes:
        raise ShapeError(f"class counts differ: {p.n_classes} vs {q.n_classes}")
    diff = p.probs.clip_min(PROB_FLOOR).log() - q.probs.clip_min(PROB_FLOOR).log()
    return (p.probs * diff).sum(axis=-1)


def kl_categorical_from_log_probs(lp_p, lp_q):
    """KL between categoricals given log-softmax tensors [..., C].

    Equivalent to kl_categorical when no probability underflows; the
    exp() of a very negative log-prob is exactly 0, which zeroes the
    corresponding term just like the floor does.
    """
    p = lp_p.exp()
    return (p * (lp_p - lp_q)).sum(axis=-1)


def log_prob_mixture(theta, prior):
    """Total log density of `theta` under the scale-mixture prior,
    summed over all entries; differentiable w.r.t. theta."""
    theta = as_tensor(theta)
    lp1 = (theta / prior.sigma1).square() * -0.5 - (0.5 * LOG_2PI + math.log(prior.sigma1)) \
        + math.log(prior.pi)
    lp2 = (theta / prior.sigma2).square() * -0.5 - (0.5 * LOG_2PI + math.log(prior.sigma2)) \
        + math.log(1.0 - prior.pi)
    # constant shift keeps the log-sum-exp stable without touching gradients
    m = constant(np.maximum(lp1.data, lp2.data))
    return (m + ((lp1 - m).exp() + (lp2 - m).exp()).log()).sum()


def sample_reparameterized(d, rng, count):
    """Draw `count` reparameterized samples from a DiagGaussian.

    Returns (epsilon, value) pairs; replaying a stored epsilon through
    mean + eps * std reproduces the value bit-exactly.
    """
    if count < 1:
        raise DomainError(f"need at least one sample, got {count}")
    out = []
    for _ in range(count):
        eps = rng.standard_normal(d.mean.shape)
        out.append((eps, d.mean + constant(eps) * d.std))
    return out


def kl_posterior_prior_mc(posterior, prior, samples):
    """Monte Carlo estimate of KL[posterior || scale-mixture prior].

    `samples` are reparameterized draws (Tensors) from the posterior;
    the estimate (1/L) sum_l [log q(theta_l) - log p(theta_l)] stays
    differentiable w.r.t. the posterior parameters through both the
    sample path and the density.
    """
    if not samples:
        raise DomainError("empty sample list")
    total = None
    for theta in samples:
        term = posterior.log_prob(theta) - log_prob_mixture(theta, prior)
        total = term if total is None else total + term
    return total / float(len(samples))
