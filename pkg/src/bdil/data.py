"""Synthetic rotated-domain data: Gaussian blob classes on a circle,
rotated copies as domains, CSV round-trip I/O, stratified splits, and
episodic meta-source/meta-target sampling.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class EpisodeError(RuntimeError):
    """Raised when an episode cannot satisfy the class-matching contract."""


@dataclass
class Dataset:
    features: np.ndarray   # [N, d]
    labels: np.ndarray     # [N] int class ids
    domain_id: int
    angle_deg: float

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("features/labels length mismatch")

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass
class Episode:
    """One training step's batch: a meta-target batch plus, for each
    meta-source domain, class-matched sample rows keyed by class id."""

    target_x: np.ndarray                 # [B, d]
    target_y: np.ndarray                 # [B]
    sources: list                        # per domain: dict class -> [n, d] rows
    target_domain: int
    source_domains: list = field(default_factory=list)


def rotate(points, zeta):
    """Rotate the first two coordinates by `zeta` radians (standard
    rotation matrix); any further coordinates pass through unchanged."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] < 2:
        raise ValueError("rotation needs at least two coordinates")
    c, s = math.cos(zeta), math.sin(zeta)
    out = points.copy()
    x, y = points[..., 0], points[..., 1]
    out[..., 0] = c * x - s * y
    out[..., 1] = s * x + c * y
    return out


def generate_blobs(n_classes=3, n_per_class=500, radius=3.0, class_std=0.4,
                   rng=None, seed=0):
    """Base dataset at angle 0: one Gaussian blob per class, class means
    evenly spaced on a circle of the given radius."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if rng is None:
        rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c in range(n_classes):
        theta = 2.0 * math.pi * c / n_classes
        center = np.array([radius * math.cos(theta), radius * math.sin(theta)])
        feats.append(center + rng.normal(0.0, class_std, size=(n_per_class, 2)))
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    return Dataset(np.vstack(feats), np.concatenate(labels), domain_id=0, angle_deg=0.0)


def make_rotated_domains(base, angles_deg):
    """One dataset per angle, sharing the base labels; angle 0 reproduces
    the base points exactly."""
    if base.angle_deg != 0.0:
        raise ValueError("base dataset must be at angle 0")
    if len(set(angles_deg)) != len(angles_deg):
        raise ValueError(f"duplicate angles in {angles_deg}")
    out = []
    for k, angle in enumerate(angles_deg):
        feats = base.features if angle == 0 else rotate(base.features, math.radians(angle))
        out.append(Dataset(feats.copy(), base.labels.copy(), domain_id=k, angle_deg=float(angle)))
    return out


def split_train_val(ds, val_frac, rng):
    """Disjoint stratified split; per-class val size is round(frac * n)."""
    if not (0.0 < val_frac < 1.0):
        raise ValueError(f"val_frac must be in (0,1), got {val_frac}")
    train_idx, val_idx = [], []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        perm = rng.permutation(idx)
        n_val = max(1, int(round(val_frac * len(idx))))
        val_idx.append(perm[:n_val])
        train_idx.append(perm[n_val:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    mk = lambda sel: Dataset(ds.features[sel], ds.labels[sel], ds.domain_id, ds.angle_deg)
    return mk(train_idx), mk(val_idx)


def sample_episode(source_domains, batch_size, n_matched, rng):
    """Pick a meta-target domain uniformly, draw its batch, and gather
    up to `n_matched` class-matched rows from every other source domain
    for each class present in the batch."""
    if len(source_domains) < 2:
        raise EpisodeError(f"episodic sampling needs >= 2 source domains, got {len(source_domains)}")
    t = int(rng.integers(len(source_domains)))
    target = source_domains[t]
    n = len(target)
    replace = batch_size > n
    rows = rng.choice(n, size=batch_size, replace=replace)
    target_x = target.features[rows]
    target_y = target.labels[rows]
    classes = np.unique(target_y)

    sources, src_ids = [], []
    for s, dom in enumerate(source_domains):
        if s == t:
            continue
        per_class = {}
        for c in classes:
            idx = np.flatnonzero(dom.labels == c)
            if len(idx) == 0:
                raise EpisodeError(
                    f"class {c} from the target batch is absent from source domain {dom.domain_id}")
            take = min(n_matched, len(idx))
            sel = rng.choice(idx, size=take, replace=False)
            per_class[int(c)] = dom.features[sel]
        sources.append(per_class)
        src_ids.append(dom.domain_id)
    return Episode(target_x=target_x, target_y=target_y, sources=sources,
                   target_domain=target.domain_id, source_domains=src_ids)


# ---- CSV I/O ---------------------------------------------------------


def save_csv(ds, path):
    d = ds.features.shape[1]
    header = ",".join(f"d{i}" for i in range(d)) + ",label,domain,angle"
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, label in zip(ds.features, ds.labels):
            cells = [f"{v:.17g}" for v in row]
            cells += [str(int(label)), str(ds.domain_id), f"{ds.angle_deg:.17g}"]
            fh.write(",".join(cells) + "\n")


def load_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 5 or header[-3:] != ["label", "domain", "angle"]:
        raise ValueError(f"{path}: malformed header: {lines[0]!r}")
    d = len(header) - 3
    feats, labels, domains, angles = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValueError(
                f"{path}: line {lineno}: expected {len(header)} columns, got {len(cells)}")
        try:
            feats.append([float(v) for v in cells[:d]])
            labels.append(int(cells[d]))
            domains.append(int(cells[d + 1]))
            angles.append(float(cells[d + 2]))
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not feats:
        raise ValueError(f"{path}: no data rows")
    if len(set(domains)) != 1 or len(set(angles)) != 1:
        raise ValueError(f"{path}: mixed domain ids or angles in one file")
    return Dataset(np.array(feats), np.array(labels), domain_id=domains[0], angle_deg=angles[0])
