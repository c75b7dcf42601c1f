"""Synthetic noisy datasets with ground truth, plus augmentation and sampling.

In-distribution samples come from well-separated Gaussian clusters (one
per class); a configurable fraction of their labels is corrupted, and a
configurable fraction of all samples is replaced by an off-manifold
Gaussian cloud with uniformly random labels.  True labels, noisy labels
and OOD flags are all recorded so correction quality can be scored
exactly.

Generation is a pure function of (config, seed): cluster geometry comes
from a dedicated substream so train and test splits of one seed share
centers while drawing independent samples.
"""

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataFormatError, DimensionError
from .numkit import Rng

OOD_LABEL = -1
_OOD_U32 = 0xFFFFFFFF

_CENTER_TAG = 101
_SAMPLE_TAG = 202

MAGIC = b"MPDS"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GenConfig:
    """Everything :func:`generate` needs; defaults give the desk benchmark."""

    num_classes: int = 10
    dim: int = 32
    per_class: int = 500
    cluster_sep: float = 7.0
    cluster_std: float = 1.0
    noise_rate: float = 0.4
    ood_rate: float = 0.1
    noise_mode: str = "uniform"  # or "pairwise"
    ood_mode: str = "clusters"  # or "shell" / "cloud"
    ood_clusters: int = 10  # clusters mode: number of unknown classes
    ood_tilt: float = 0.0  # clusters mode: cosine pulling each unknown class
    #                        toward one known class (0 = fully orthogonal)
    ood_scale: float = 4.0  # cloud mode: spread multiple of cluster_std
    seed: int = 0
    split: int = 0  # same seed, different sample stream (0=train, 1=test, ...)

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}")
        if self.per_class < 0:
            raise ConfigError(f"per_class must be >= 0, got {self.per_class}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ConfigError(
                f"noise_rate must lie in [0, 1], got {self.noise_rate}"
            )
        if not 0.0 <= self.ood_rate < 1.0:
            raise ConfigError(f"ood_rate must lie in [0, 1), got {self.ood_rate}")
        if self.noise_mode not in ("uniform", "pairwise"):
            raise ConfigError(f"unknown noise_mode {self.noise_mode!r}")
        if self.ood_mode not in ("clusters", "shell", "cloud"):
            raise ConfigError(f"unknown ood_mode {self.ood_mode!r}")
        if self.ood_mode == "clusters" and self.ood_clusters < 1:
            raise ConfigError(f"ood_clusters must be >= 1, got {self.ood_clusters}")
        if not 0.0 <= self.ood_tilt < 1.0:
            raise ConfigError(f"ood_tilt must lie in [0, 1), got {self.ood_tilt}")
        if self.cluster_sep <= 0 or self.cluster_std <= 0 or self.ood_scale <= 0:
            raise ConfigError("cluster_sep, cluster_std and ood_scale must be positive")


@dataclass(eq=False)
class NoisyDataset:
    """Feature matrix with (true label, noisy label, OOD flag) ground truth."""

    features: np.ndarray      # (n, dim) float64
    noisy_labels: np.ndarray  # (n,) int64, always in 0..K-1
    true_labels: np.ndarray   # (n,) int64, OOD_LABEL for outliers
    is_ood: np.ndarray        # (n,) bool
    num_classes: int
    dim: int
    noise_rate: float
    ood_rate: float
    seed: int

    @property
    def n(self):
        return self.features.shape[0]

    def __eq__(self, other):
        if not isinstance(other, NoisyDataset):
            return NotImplemented
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.noisy_labels, other.noisy_labels)
            and np.array_equal(self.true_labels, other.true_labels)
            and np.array_equal(self.is_ood, other.is_ood)
            and (self.num_classes, self.dim, self.noise_rate, self.ood_rate, self.seed)
            == (other.num_classes, other.dim, other.noise_rate, other.ood_rate, other.seed)
        )


def cluster_centers(num_classes, dim, sep, rng):
    """Class centers at radius ``sep``; orthogonal whenever K <= dim."""
    if num_classes <= dim:
        g = rng.standard_normal((dim, num_classes))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))  # fix the sign ambiguity for determinism
        return np.ascontiguousarray(q.T * sep)
    rows = rng.standard_normal((num_classes, dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return rows * sep


def _all_centers(config, rng):
    """Known-class centers plus unknown-class centers for "clusters" OOD.

    Drawn jointly so the whole set is mutually orthogonal when it fits
    inside the feature dimension.  A nonzero ``ood_tilt`` leans unknown
    center i toward known class (i mod K) by that cosine, at unchanged
    radius, mimicking outliers that resemble one vocabulary class.
    """
    extra = config.ood_clusters if config.ood_mode == "clusters" else 0
    both = cluster_centers(config.num_classes + extra, config.dim,
                           config.cluster_sep, rng)
    known, unknown = both[: config.num_classes], both[config.num_classes:]
    if extra and config.ood_tilt > 0.0:
        t = config.ood_tilt
        parents = known[np.arange(extra) % config.num_classes]
        unknown = t * parents + math.sqrt(1.0 - t * t) * unknown
    return known, unknown


def generate(config):
    """Draw a NoisyDataset from the generative process described above."""
    config.validate()
    k, d = config.num_classes, config.dim
    centers, unknown = _all_centers(config, Rng(config.seed, (_CENTER_TAG,)))
    rng = Rng(config.seed, (_SAMPLE_TAG, config.split))

    n = config.per_class * k
    intended = (np.arange(n) % k)[rng.permutation(n)]
    ood_mask = rng.random(n) < config.ood_rate
    flip_mask = (rng.random(n) < config.noise_rate) & ~ood_mask
    noise = rng.standard_normal((n, d))
    flip_offsets = rng.integers(1, k, size=n)
    random_labels = rng.integers(0, k, size=n)

    features = centers[intended] + config.cluster_std * noise
    if config.ood_mode == "clusters":
        # coherent unknown classes carrying uniformly random known labels,
        # like web outliers that still arrive with a class query attached
        pick = rng.integers(0, config.ood_clusters, size=n)
        features[ood_mask] = (unknown[pick[ood_mask]]
                              + config.cluster_std * noise[ood_mask])
    elif config.ood_mode == "shell":
        # isolated outliers at random directions on the class-center shell
        dirs = rng.standard_normal((n, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        features[ood_mask] = (config.cluster_sep * dirs[ood_mask]
                              + config.cluster_std * noise[ood_mask])
    else:
        grand_mean = centers.mean(axis=0)
        features[ood_mask] = (grand_mean
                              + config.ood_scale * config.cluster_std * noise[ood_mask])

    noisy = intended.copy()
    if config.noise_mode == "uniform":
        noisy[flip_mask] = (intended[flip_mask] + flip_offsets[flip_mask]) % k
    else:
        noisy[flip_mask] = (intended[flip_mask] + 1) % k
    noisy[ood_mask] = random_labels[ood_mask]

    true = np.where(ood_mask, OOD_LABEL, intended).astype(np.int64)
    return NoisyDataset(
        features=np.ascontiguousarray(features),
        noisy_labels=noisy.astype(np.int64),
        true_labels=true,
        is_ood=ood_mask.copy(),
        num_classes=k,
        dim=d,
        noise_rate=config.noise_rate,
        ood_rate=config.ood_rate,
        seed=config.seed,
    )


def heldout_split(config, per_class=100):
    """Clean companion split sharing the train split's cluster centers."""
    return generate(
        replace(config, per_class=per_class, noise_rate=0.0, ood_rate=0.0, split=config.split + 1)
    )


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentPolicy:
    """Parametric perturbation: additive noise, and for the strong flavour
    per-coordinate dropout plus random per-coordinate scaling."""

    kind: str
    sigma: float
    dropout: float = 0.0
    scale_range: tuple = (1.0, 1.0)

    @classmethod
    def weak(cls, sigma):
        return cls(kind="weak", sigma=float(sigma))

    @classmethod
    def strong(cls, sigma, dropout, scale_range):
        return cls(kind="strong", sigma=float(sigma), dropout=float(dropout),
                   scale_range=(float(scale_range[0]), float(scale_range[1])))

    def validate(self):
        if self.kind not in ("weak", "strong"):
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.scale_range[0] > self.scale_range[1]:
            raise ConfigError(f"empty scale range {self.scale_range}")


def augment(x, policy, rng):
    """Stochastic perturbation of one vector or a batch of rows.

    Draw order is fixed (scale, dropout, noise) so a seeded stream
    reproduces exactly.  E[output] = input * (1 - dropout) * mean(scale).
    """
    policy.validate()
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    lo, hi = policy.scale_range
    if (lo, hi) != (1.0, 1.0):
        out *= rng.uniform(lo, hi, x.shape)
    if policy.dropout > 0.0:
        out *= rng.random(x.shape) >= policy.dropout
    if policy.sigma > 0.0:
        out += policy.sigma * rng.standard_normal(x.shape)
    return out


# ---------------------------------------------------------------------------
# class-balancing sampler
# ---------------------------------------------------------------------------

def sqrt_sampler(labels, seed, chunk_size=4096):
    """Infinite index stream with per-sample weight 1/sqrt(class size).

    Aggregate class mass is then proportional to sqrt(n_k), flattening
    imbalance without discarding data.  Reproducible from ``seed``.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise DimensionError("cannot sample from an empty label set")
    if y.min() < 0:
        raise DimensionError("sampler labels must be nonnegative")
    counts = np.bincount(y)
    weights = 1.0 / np.sqrt(counts[y].astype(np.float64))
    probs = weights / weights.sum()
    rng = Rng(seed)

    def stream():
        while True:
            for idx in rng.choice_weighted(y.size, chunk_size, probs):
                yield int(idx)

    return stream()


# ---------------------------------------------------------------------------
# file round-trip
# ---------------------------------------------------------------------------

# Dataset container (little-endian): magic "MPDS", version u16, header
# (K u64, dim u64, n u64, noise_rate f64, ood_rate f64, seed u64), then
# contiguous blocks: features n*dim f64, noisy labels n u32, true labels
# n u32 (0xFFFFFFFF marks OOD), is_ood flags n u8.
_HEADER = struct.Struct("<QQQddQ")


def save_dataset(dataset, path):
    """Write the MPDS container (little-endian, versioned)."""
    n, d = dataset.features.shape
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<H", FORMAT_VERSION)
    blob += _HEADER.pack(dataset.num_classes, dataset.dim, n,
                         dataset.noise_rate, dataset.ood_rate, dataset.seed)
    blob += np.ascontiguousarray(dataset.features, dtype="<f8").tobytes()
    blob += dataset.noisy_labels.astype("<u4").tobytes()
    true_u32 = np.where(dataset.true_labels < 0, _OOD_U32, dataset.true_labels)
    blob += true_u32.astype("<u4").tobytes()
    blob += dataset.is_ood.astype("<u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_dataset(path):
    """Parse an MPDS file; failures name the byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise DataFormatError(f"{path}: bad magic at byte 0 (expected {MAGIC!r})")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported format version {version} at byte 4"
        )
    off = 6
    if len(raw) < off + _HEADER.size:
        raise DataFormatError(f"{path}: truncated header at byte {len(raw)}")
    k, d, n, noise_rate, ood_rate, seed = _HEADER.unpack_from(raw, off)
    off += _HEADER.size

    def block(count, dtype, what):
        nonlocal off
        want = count * np.dtype(dtype).itemsize
        if len(raw) < off + want:
            raise DataFormatError(
                f"{path}: truncated {what} block at byte {len(raw)} "
                f"(expected {off + want} bytes)"
            )
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += want
        return arr

    features = block(n * d, "<f8", "features").reshape(n, d)
    noisy = block(n, "<u4", "noisy_label").astype(np.int64)
    true_u32 = block(n, "<u4", "true_label")
    flags = block(n, "<u1", "is_ood").astype(bool)
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes at {off}")

    true = np.where(true_u32 == _OOD_U32, OOD_LABEL, true_u32.astype(np.int64))
    if n and noisy.max() >= k:
        raise DataFormatError(f"{path}: noisy label out of range 0..{k - 1}")
    if not np.array_equal(flags, true == OOD_LABEL):
        raise DataFormatError(f"{path}: is_ood flags disagree with true labels")
    return NoisyDataset(
        features=np.ascontiguousarray(features),
        noisy_labels=noisy,
        true_labels=true,
        is_ood=flags,
        num_classes=int(k),
        dim=int(d),
        noise_rate=float(noise_rate),
        ood_rate=float(ood_rate),
        seed=int(seed),
    )
