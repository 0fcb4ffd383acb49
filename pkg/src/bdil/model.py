"""Network assembly: deterministic ReLU stem, Bayesian feature layer,
Bayesian classifier, Monte Carlo predictive inference, and checkpoints.

Variant flags select which of the two head layers are Bayesian and
which carry an invariance penalty; a deterministic variant keeps the
same parameter storage but runs at the posterior mean with a tiny
substitute std in the invariance path.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .tensor import Tensor, constant, ShapeError
from .distributions import DiagGaussian
from .layers import (BayesianLinear, DeterministicLinear, CHECKPOINT_MAGIC,
                     CHECKPOINT_VERSION, sample_weights_batched, mean_weights,
                     write_param_block, read_param_block)

# Ablation grid: variant id -> (psi_bayesian, psi_invariant, phi_bayesian, phi_invariant)
VARIANT_FLAGS = {
    "a": (False, False, False, False),
    "b": (True, False, False, False),
    "c": (False, True, False, False),
    "d": (True, True, False, False),
    "e": (False, False, True, False),
    "f": (False, False, False, True),
    "g": (False, False, True, True),
    "h": (True, False, True, False),
    "i": (False, True, False, True),
    "j": (True, True, True, True),
}

DET_STD = 1e-6  # substitute std for non-Bayesian layers in the invariance path


@dataclass
class NetworkConfig:
    in_dim: int = 2
    stem_widths: tuple = (64, 64)
    z_dim: int = 16
    n_classes: int = 3
    psi_bayesian: bool = True
    psi_invariant: bool = True
    phi_bayesian: bool = True
    phi_invariant: bool = True
    init_sigma: float = 0.05
    invariance_z_mode: str = "sample"  # or "mean"
    extra_bayesian_layer: bool = False

    def apply_variant(self, variant_id):
        flags = VARIANT_FLAGS[variant_id]
        self.psi_bayesian, self.psi_invariant, self.phi_bayesian, self.phi_invariant = flags
        return self


@dataclass
class Prediction:
    probs: np.ndarray            # [B, C], MC-averaged predictive
    per_sample_logits: Tensor    # [L, M, B, C] (degenerate axes collapse to 1)


class Network:
    def __init__(self, cfg, rng):
        if cfg.n_classes < 2:
            raise ShapeError(f"need at least 2 classes, got {cfg.n_classes}")
        if cfg.in_dim < 1 or cfg.z_dim < 1 or any(w < 1 for w in cfg.stem_widths):
            raise ShapeError("all layer widths must be >= 1")
        if cfg.invariance_z_mode not in ("sample", "mean"):
            raise ValueError(f"unknown invariance_z_mode {cfg.invariance_z_mode!r}")
        self.cfg = cfg
        widths = [cfg.in_dim] + list(cfg.stem_widths)
        self.stem = [DeterministicLinear(widths[i], widths[i + 1], rng)
                     for i in range(len(widths) - 1)]
        h_dim = widths[-1]
        self.stem_extra = None
        if cfg.extra_bayesian_layer:
            self.stem_extra = BayesianLinear(h_dim, h_dim, rng, init_sigma=cfg.init_sigma)
        self.phi = BayesianLinear(h_dim, cfg.z_dim, rng, init_sigma=cfg.init_sigma)
        self.psi = BayesianLinear(cfg.z_dim, cfg.n_classes, rng, init_sigma=cfg.init_sigma)

    def parameters(self):
        params = []
        for layer in self.stem:
            params += layer.parameters()
        if self.stem_extra is not None:
            params += self.stem_extra.parameters()
        params += self.phi.parameters()
        params += self.psi.parameters()
        return params

    def named_layers(self):
        out = [(f"stem.{i}", layer) for i, layer in enumerate(self.stem)]
        if self.stem_extra is not None:
            out.append(("stem_extra", self.stem_extra))
        out += [("phi", self.phi), ("psi", self.psi)]
        return out

    def prior_kl_layers(self):
        """Layers whose posterior-prior KL enters the objective."""
        layers = []
        if self.cfg.phi_bayesian:
            layers.append(self.phi)
            if self.stem_extra is not None:
                layers.append(self.stem_extra)
        if self.cfg.psi_bayesian:
            layers.append(self.psi)
        return layers


def build_network(cfg, rng):
    return Network(cfg, rng)


def forward_features(net, x, rng=None):
    """ReLU MLP stem; the optional extra Bayesian stem layer is applied
    with one weight draw when an rng is given, at its mean otherwise."""
    h = x if isinstance(x, Tensor) else constant(x)
    if h.shape[-1] != net.cfg.in_dim:
        raise ShapeError(f"input width {h.shape[-1]} != configured in_dim {net.cfg.in_dim}")
    for layer in net.stem:
        h = layer.forward(h).relu()
    if net.stem_extra is not None:
        if rng is not None and net.cfg.phi_bayesian:
            w, b, _, _ = sample_weights_batched(net.stem_extra, rng, 1)
        else:
            w, b, _, _ = mean_weights(net.stem_extra)
        h = (h.reshape((1,) + h.shape) @ w + b.reshape(1, 1, -1)).relu()
        h = h.reshape(h.shape[1:])
    return h


def feature_distribution(net, x, rng=None, features=None):
    """Per-row Gaussian over the feature layer's pre-activations.

    For a non-Bayesian feature layer the std degenerates to DET_STD so
    the closed-form KL stays defined (a scaled squared-mean distance).
    """
    h = features if features is not None else forward_features(net, x, rng=rng)
    mean = h @ net.phi.w_mu + net.phi.b_mu
    if net.cfg.phi_bayesian:
        var = h.square() @ net.phi.w_sigma().square() + net.phi.b_sigma().square()
        std = var.sqrt()
    else:
        std = constant(np.full(mean.shape, DET_STD))
    return DiagGaussian(mean, std)


def _head_samples(net, rng, L, M):
    """Weight draws for the two head layers, batched along a leading axis.

    Deterministic variants collapse to a single mean draw; the degenerate
    axis broadcasts against the requested L/M in downstream matmuls.
    """
    if net.cfg.phi_bayesian:
        phi_w, phi_b, _, _ = sample_weights_batched(net.phi, rng, M)
    else:
        phi_w, phi_b, _, _ = mean_weights(net.phi)
    if net.cfg.psi_bayesian:
        psi_w, psi_b, _, _ = sample_weights_batched(net.psi, rng, L)
    else:
        psi_w, psi_b, _, _ = mean_weights(net.psi)
    return phi_w, phi_b, psi_w, psi_b


def mc_logits(net, x, L, M, rng, features=None):
    """Per-sample logits [L', M', B, C] where primed axes may be 1 for
    deterministic layers (they broadcast against the nominal L, M)."""
    if L < 1 or M < 1:
        raise ValueError(f"L and M must be >= 1, got {L}, {M}")
    h = features if features is not None else forward_features(net, x, rng=rng)
    phi_w, phi_b, psi_w, psi_b = _head_samples(net, rng, L, M)
    z = h @ phi_w + phi_b.reshape(phi_b.shape[0], 1, -1)        # [M', B, z]
    z4 = z.reshape((1,) + z.shape)                              # [1, M', B, z]
    psi_w4 = psi_w.reshape(psi_w.shape[0], 1, psi_w.shape[1], psi_w.shape[2])
    logits = z4 @ psi_w4 + psi_b.reshape(psi_b.shape[0], 1, 1, -1)
    return logits                                               # [L', M', B, C]


def predict_mc(net, x, L, M, rng):
    """MC-averaged predictive distribution over classes."""
    logits = mc_logits(net, x, L, M, rng)
    lv = logits.data
    m = lv.max(axis=-1, keepdims=True)
    p = np.exp(lv - m)
    p /= p.sum(axis=-1, keepdims=True)
    probs = p.mean(axis=(0, 1))
    return Prediction(probs=probs, per_sample_logits=logits)


# ---- checkpoints ----------------------------------------------------


def save_checkpoint(net, path):
    with open(path, "w") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
        cfg = asdict(net.cfg)
        cfg["stem_widths"] = list(cfg["stem_widths"])
        fh.write("config " + json.dumps(cfg, sort_keys=True) + "\n")
        for lname, layer in net.named_layers():
            for pname, p in layer.named_parameters():
                write_param_block(fh, f"{lname}.{pname}", p)
        fh.write("end\n")


def load_checkpoint(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    if lines[0] != f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: unsupported checkpoint version: {lines[0]!r}")
    if not lines[1].startswith("config "):
        raise ValueError(f"{path}: missing config header")
    raw = json.loads(lines[1][len("config "):])
    raw["stem_widths"] = tuple(raw["stem_widths"])
    cfg = NetworkConfig(**raw)
    net = Network(cfg, np.random.default_rng(0))
    params = dict()
    pos = 2
    while pos < len(lines) and lines[pos] != "end":
        name, values, pos = read_param_block(lines, pos)
        params[name] = values
    for lname, layer in net.named_layers():
        for pname, p in layer.named_parameters():
            key = f"{lname}.{pname}"
            if key not in params:
                raise ValueError(f"{path}: missing parameter {key}")
            if params[key].shape != p.data.shape:
                raise ValueError(f"{path}: shape mismatch for {key}")
            p.data = np.ascontiguousarray(params[key])
    return net
