"""Self-contained mathematical verification checks on random instances:
moment propagation vs Monte Carlo, the Jensen and convexity bounds on
mixture KLs, the closed-form Gaussian KL against quadrature, and a
finite-difference check of the full objective's gradients.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .tensor import constant, finite_difference_check
from .distributions import (Categorical, DiagGaussian, kl_categorical,
                            kl_diag_gaussian)
from .layers import BayesianLinear, propagate_moments
from .data import Episode
from .model import NetworkConfig, build_network
from .objective import total_objective
from .train import TrainConfig


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: measured={self.measured:.3e} "
                f"threshold={self.threshold:.3e}")


def gaussian_kl_quadrature(mu_p, s_p, mu_q, s_q):
    """1-D KL[p || q] by numerical integration of p * log(p/q)."""

    def integrand(x):
        lp = -0.5 * ((x - mu_p) / s_p) ** 2 - math.log(s_p)
        lq = -0.5 * ((x - mu_q) / s_q) ** 2 - math.log(s_q)
        return math.exp(lp - 0.5 * math.log(2 * math.pi)) * (lp - lq)

    lo, hi = mu_p - 12 * s_p, mu_p + 12 * s_p
    val, _ = quad(integrand, lo, hi, limit=200)
    return val


def gaussian_mixture_kl_quadrature(mu_r, s_r, comps, weights):
    """KL[r || sum_k w_k N(mu_k, s_k^2)] by numerical integration."""

    def mix_pdf(x):
        return sum(w * math.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
                   for w, (m, s) in zip(weights, comps))

    def integrand(x):
        r = math.exp(-0.5 * ((x - mu_r) / s_r) ** 2) / (s_r * math.sqrt(2 * math.pi))
        if r < 1e-300:
            return 0.0
        return r * (math.log(r) - math.log(mix_pdf(x)))

    lo, hi = mu_r - 12 * s_r, mu_r + 12 * s_r
    val, _ = quad(integrand, lo, hi, limit=200)
    return val


def check_moment_propagation(n_layers=20, n_samples=10**6, rng=None):
    """Propagated mean within 4 SE and std within 2% of MC estimates."""
    rng = rng or np.random.default_rng(11)
    worst_mean_se = 0.0
    worst_std_rel = 0.0
    for _ in range(n_layers):
        in_dim = int(rng.integers(2, 6))
        out_dim = int(rng.integers(2, 5))
        layer = BayesianLinear(in_dim, out_dim, rng, init_sigma=float(rng.uniform(0.05, 0.5)))
        layer.w_mu.data = rng.normal(0, 1, size=(in_dim, out_dim))
        x = rng.normal(0, 1, size=in_dim)
        dist = propagate_moments(layer, constant(x[None, :]))
        mean = dist.mean.data[0]
        std = dist.std.data[0]

        # streaming MC moments of x @ w + b under the posterior
        w_sig = layer.w_sigma().data
        b_sig = layer.b_sigma().data
        count, acc, acc2 = 0, np.zeros(out_dim), np.zeros(out_dim)
        chunk = 100_000
        while count < n_samples:
            k = min(chunk, n_samples - count)
            w = layer.w_mu.data + rng.standard_normal((k, in_dim, out_dim)) * w_sig
            b = layer.b_mu.data + rng.standard_normal((k, out_dim)) * b_sig
            zs = np.einsum("i,kio->ko", x, w) + b
            acc += zs.sum(axis=0)
            acc2 += (zs**2).sum(axis=0)
            count += k
        mc_mean = acc / count
        mc_var = acc2 / count - mc_mean**2
        mc_std = np.sqrt(mc_var)
        se = mc_std / math.sqrt(count)
        worst_mean_se = max(worst_mean_se, float(np.max(np.abs(mean - mc_mean) / se)))
        worst_std_rel = max(worst_std_rel, float(np.max(np.abs(std - mc_std) / mc_std)))
    return [
        CheckResult("moment_propagation_mean_4se", worst_mean_se < 4.0, worst_mean_se, 4.0),
        CheckResult("moment_propagation_std_2pct", worst_std_rel < 0.02, worst_std_rel, 0.02),
    ]


def _random_categorical(rng, k):
    p = rng.dirichlet(np.ones(k))
    return Categorical.from_probs(constant(p))


def check_jensen_bound(trials=100, gaussian_trials=20, rng=None):
    """KL(r || sum w_k p_k) <= sum w_k KL(r || p_k), exactly for
    categorical mixtures and by quadrature for Gaussian mixtures."""
    rng = rng or np.random.default_rng(12)
    worst = -np.inf
    for _ in range(trials):
        k = int(rng.integers(2, 6))
        n_comp = int(rng.integers(2, 5))
        w = rng.dirichlet(np.ones(n_comp))
        r = _random_categorical(rng, k)
        comps = [_random_categorical(rng, k) for _ in range(n_comp)]
        mix = Categorical.from_probs(constant(
            sum(wi * c.probs.data for wi, c in zip(w, comps))))
        lhs = float(kl_categorical(r, mix).data)
        rhs = float(sum(wi * kl_categorical(r, c).data for wi, c in zip(w, comps)))
        worst = max(worst, lhs - rhs)
    gap_cat = worst

    worst_g = -np.inf
    for _ in range(gaussian_trials):
        n_comp = int(rng.integers(2, 4))
        w = rng.dirichlet(np.ones(n_comp))
        mu_r, s_r = float(rng.normal(0, 1)), float(rng.uniform(0.3, 1.5))
        comps = [(float(rng.normal(0, 1)), float(rng.uniform(0.3, 1.5)))
                 for _ in range(n_comp)]
        lhs = gaussian_mixture_kl_quadrature(mu_r, s_r, comps, w)
        rhs = sum(wi * float(kl_diag_gaussian(
            DiagGaussian(constant([mu_r]), constant([s_r])),
            DiagGaussian(constant([m]), constant([s]))).data)
            for wi, (m, s) in zip(w, comps))
        worst_g = max(worst_g, lhs - rhs)
    return [
        CheckResult("jensen_bound_categorical", gap_cat <= 1e-12, gap_cat, 1e-12),
        CheckResult("jensen_bound_gaussian_mixture", worst_g <= 1e-6, worst_g, 1e-6),
    ]


def check_convexity_bound(trials=100, rng=None):
    """KL(sum w_k p_k || sum w_k q_k) <= sum w_k KL(p_k || q_k)."""
    rng = rng or np.random.default_rng(13)
    worst = -np.inf
    for _ in range(trials):
        k = int(rng.integers(2, 6))
        n_comp = int(rng.integers(2, 5))
        w = rng.dirichlet(np.ones(n_comp))
        ps = [_random_categorical(rng, k) for _ in range(n_comp)]
        qs = [_random_categorical(rng, k) for _ in range(n_comp)]
        mix_p = Categorical.from_probs(constant(sum(wi * p.probs.data for wi, p in zip(w, ps))))
        mix_q = Categorical.from_probs(constant(sum(wi * q.probs.data for wi, q in zip(w, qs))))
        lhs = float(kl_categorical(mix_p, mix_q).data)
        rhs = float(sum(wi * kl_categorical(p, q).data for wi, p, q in zip(w, ps, qs)))
        worst = max(worst, lhs - rhs)
    return [CheckResult("convexity_bound_categorical", worst <= 1e-12, worst, 1e-12)]


def check_gaussian_kl_closed_form(pairs=50, rng=None):
    """Closed form vs quadrature within 1e-6 relative on random pairs."""
    rng = rng or np.random.default_rng(14)
    worst = 0.0
    for _ in range(pairs):
        mu_p, mu_q = rng.normal(0, 2, size=2)
        s_p, s_q = rng.uniform(0.2, 3.0, size=2)
        closed = float(kl_diag_gaussian(
            DiagGaussian(constant([mu_p]), constant([s_p])),
            DiagGaussian(constant([mu_q]), constant([s_q]))).data)
        numeric = gaussian_kl_quadrature(mu_p, s_p, mu_q, s_q)
        worst = max(worst, abs(closed - numeric) / max(1e-12, abs(numeric)))
    return [CheckResult("gaussian_kl_vs_quadrature", worst < 1e-6, worst, 1e-6)]


def make_gradient_check_episode(seed=0):
    """Tiny 2-class episode plus network/config for the gradient check."""
    rng = np.random.default_rng(seed)
    cfg = TrainConfig(mc_l=2, mc_m=2, batch_size=4, n_matched=2,
                      lambda_psi=1.0, lambda_phi=0.5,
                      stem_widths=(6,), z_dim=3, seed=seed)
    net_cfg = NetworkConfig(in_dim=2, stem_widths=(6,), z_dim=3, n_classes=2,
                            init_sigma=0.1)
    net = build_network(net_cfg, rng)
    target_x = rng.normal(0, 1, size=(4, 2))
    target_y = np.array([0, 1, 0, 1])
    sources = [{0: rng.normal(0, 1, size=(2, 2)), 1: rng.normal(0, 1, size=(2, 2))}
               for _ in range(2)]
    episode = Episode(target_x=target_x, target_y=target_y, sources=sources,
                      target_domain=0, source_domains=[1, 2])
    return net, episode, cfg


def check_objective_gradients(seed=0, h=1e-5):
    """Analytic gradients of the full objective vs central differences
    with frozen reparameterization noise (fixed MC seed per evaluation)."""
    net, episode, cfg = make_gradient_check_episode(seed)

    def f():
        _, loss = total_objective(net, episode, cfg, np.random.default_rng(99))
        return loss

    err = finite_difference_check(f, net.parameters(), h=h)
    return [CheckResult("objective_gradient_fd", err < 1e-4, err, 1e-4)]


def run_all_checks():
    results = []
    results += check_moment_propagation()
    results += check_jensen_bound()
    results += check_convexity_bound()
    results += check_gaussian_kl_closed_form()
    results += check_objective_gradients()
    return results
