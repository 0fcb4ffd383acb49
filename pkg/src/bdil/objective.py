"""The full training loss: Monte Carlo cross-entropy, classifier and
representation invariance penalties over class-matched cross-domain
pairs, and posterior-prior KL terms, gated by the variant flags.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, constant, ShapeError, DomainError
from .distributions import DiagGaussian, kl_diag_gaussian, kl_categorical_from_log_probs
from .layers import layer_prior_kl_batched, sample_weights_batched, mean_weights
from .model import forward_features, feature_distribution


@dataclass
class LossBreakdown:
    ce: float
    inv_psi: float
    inv_phi: float
    kl_psi: float
    kl_phi: float
    total: float
    lambda_psi: float
    lambda_phi: float
    kl_scale: float

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ("ce", "inv_psi", "inv_phi", "kl_psi", "kl_phi", "total",
                 "lambda_psi", "lambda_phi", "kl_scale")}


def cross_entropy_mc(per_sample_logits, labels):
    """Mean over (sample draws, batch) of -log softmax(logits)[label]."""
    labels = np.asarray(labels, dtype=np.intp)
    n_classes = per_sample_logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= n_classes):
        raise DomainError(f"labels must lie in [0, {n_classes})")
    lse = per_sample_logits.logsumexp(axis=-1)
    true_logit = per_sample_logits.select_last(labels)
    return (lse - true_logit).mean()


def match_pairs(target_labels, sources):
    """Flatten the episode's class-matched structure into parallel index
    arrays over the target batch and a stacked source matrix.

    Returns (src_matrix [R, d], tgt_idx [P], src_idx [P]): row p pairs
    target row tgt_idx[p] with stacked source row src_idx[p].
    """
    blocks, offsets = [], {}
    offset = 0
    for s, per_class in enumerate(sources):
        for c in sorted(per_class):
            rows = per_class[c]
            blocks.append(rows)
            offsets[(s, c)] = (offset, len(rows))
            offset += len(rows)
    if not blocks:
        raise EpisodePairingError("episode has no source samples")
    src_matrix = np.vstack(blocks)
    tgt_idx, src_idx = [], []
    for i, y in enumerate(target_labels):
        for s in range(len(sources)):
            if (s, int(y)) not in offsets:
                raise EpisodePairingError(
                    f"no source samples of class {int(y)} in meta-source {s}")
            start, count = offsets[(s, int(y))]
            tgt_idx.extend([i] * count)
            src_idx.extend(range(start, start + count))
    return src_matrix, np.asarray(tgt_idx, dtype=np.intp), np.asarray(src_idx, dtype=np.intp)


class EpisodePairingError(ValueError):
    """Sampler contract violated: a target class has no matched source rows."""


def _log_softmax(logits):
    lse = logits.logsumexp(axis=-1)
    return logits - lse.reshape(lse.shape + (1,))


def classifier_invariance_loss(psi_w, psi_b, z_target, z_source, tgt_idx, src_idx):
    """Mean categorical KL between class-matched target and source
    predictions under shared classifier weight draws.

    psi_w: [K, z, C], psi_b: [K, C]; z_target / z_source carry rows along
    their second-to-last axis and may have a leading draw axis that
    broadcasts against K.
    """
    b3 = psi_b.reshape(psi_b.shape[0], 1, psi_b.shape[1])
    logits_t = z_target @ psi_w + b3
    logits_s = z_source @ psi_w + b3
    lp_t = _log_softmax(logits_t.take(tgt_idx, axis=-2))
    lp_s = _log_softmax(logits_s.take(src_idx, axis=-2))
    return kl_categorical_from_log_probs(lp_t, lp_s).mean()


def representation_invariance_loss(target_dist, source_dist, tgt_idx, src_idx):
    """Mean closed-form Gaussian KL over class-matched feature pairs."""
    p = target_dist.take(tgt_idx, axis=-2)
    q = source_dist.take(src_idx, axis=-2)
    return kl_diag_gaussian(p, q).mean()


def total_objective(net, episode, cfg, rng):
    """Assemble the full loss for one episode.

    Term gating: invariance terms require the matching invariant flag,
    prior KLs require the matching Bayesian flag. The cross-entropy,
    classifier invariance, and prior-KL terms all reuse one set of
    reparameterized weight draws per iteration. Returns the float
    breakdown and the differentiable scalar root.
    """
    c = net.cfg
    L, M = cfg.mc_l, cfg.mc_m
    x_t = constant(episode.target_x)
    h_t = forward_features(net, x_t, rng=rng)

    if c.phi_bayesian:
        phi_w, phi_b, _, _ = sample_weights_batched(net.phi, rng, M)
    else:
        phi_w, phi_b, _, _ = mean_weights(net.phi)
    if c.psi_bayesian:
        psi_w, psi_b, _, _ = sample_weights_batched(net.psi, rng, L)
    else:
        psi_w, psi_b, _, _ = mean_weights(net.psi)

    z = h_t @ phi_w + phi_b.reshape(phi_b.shape[0], 1, -1)      # [M', B, z]
    z4 = z.reshape((1,) + z.shape)
    psi_w4 = psi_w.reshape(psi_w.shape[0], 1, psi_w.shape[1], psi_w.shape[2])
    logits = z4 @ psi_w4 + psi_b.reshape(psi_b.shape[0], 1, 1, -1)
    ce = cross_entropy_mc(logits, episode.target_y)

    zero = constant(0.0)
    inv_psi = inv_phi = kl_psi = kl_phi = zero

    if c.psi_invariant or c.phi_invariant:
        src_matrix, tgt_idx, src_idx = match_pairs(episode.target_y, episode.sources)
        h_s = forward_features(net, constant(src_matrix), rng=rng)
        dist_t = feature_distribution(net, None, features=h_t)
        dist_s = feature_distribution(net, None, features=h_s)

        if c.phi_invariant:
            inv_phi = representation_invariance_loss(dist_t, dist_s, tgt_idx, src_idx)

        if c.psi_invariant:
            K = psi_w.shape[0]
            if c.invariance_z_mode == "sample":
                eps_t = rng.standard_normal((K,) + dist_t.mean.shape)
                eps_s = rng.standard_normal((K,) + dist_s.mean.shape)
                z_t = dist_t.mean + constant(eps_t) * dist_t.std
                z_s = dist_s.mean + constant(eps_s) * dist_s.std
            else:
                z_t = dist_t.mean.reshape((1,) + dist_t.mean.shape)
                z_s = dist_s.mean.reshape((1,) + dist_s.mean.shape)
            inv_psi = classifier_invariance_loss(psi_w, psi_b, z_t, z_s, tgt_idx, src_idx)

    prior = cfg.prior
    if c.psi_bayesian:
        kl_psi = layer_prior_kl_batched(net.psi, prior, psi_w, psi_b)
    if c.phi_bayesian:
        kl_phi = layer_prior_kl_batched(net.phi, prior, phi_w, phi_b)
        if net.stem_extra is not None:
            w, b, _, _ = sample_weights_batched(net.stem_extra, rng, M)
            kl_phi = kl_phi + layer_prior_kl_batched(net.stem_extra, prior, w, b)

    total = ce + cfg.lambda_psi * inv_psi + cfg.lambda_phi * inv_phi \
        + cfg.kl_scale * (kl_psi + kl_phi)
    breakdown = LossBreakdown(
        ce=float(ce.data), inv_psi=float(inv_psi.data), inv_phi=float(inv_phi.data),
        kl_psi=float(kl_psi.data), kl_phi=float(kl_phi.data), total=float(total.data),
        lambda_psi=cfg.lambda_psi, lambda_phi=cfg.lambda_phi, kl_scale=cfg.kl_scale)
    return breakdown, total
