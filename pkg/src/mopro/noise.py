"""Online noise correction: soft-label blending and the hard trichotomy.

Each sample's soft label mixes classifier probabilities with prototype
similarities; the hard rule then either trusts the argmax (when confident
past a threshold), keeps the original label (when it still beats uniform
probability), or marks the sample out-of-distribution.  Both comparisons
are strict, so a score exactly at the boundary falls through.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolationError, DimensionError

OOD = -1  # label sentinel in vectorized arrays

_PROB_TOL = 1e-6


class Rule(enum.IntEnum):
    """Which branch of the trichotomy fired."""

    ARGMAX = 0
    KEEP_ORIGINAL = 1
    OOD = 2


@dataclass(frozen=True)
class PseudoLabel:
    """Corrected label (None when out-of-distribution) plus its provenance."""

    label: int | None
    rule: Rule

    @property
    def is_ood(self):
        return self.label is None


@dataclass(frozen=True)
class BatchCorrection:
    """Vectorized correction result for one batch."""

    labels: np.ndarray  # int64, OOD encoded as -1
    rules: np.ndarray   # uint8 Rule values
    n_argmax: int
    n_kept: int
    n_ood: int


def _check_prob_vector(v, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {v.shape}")
    if (v < -_PROB_TOL).any() or abs(float(v.sum()) - 1.0) > _PROB_TOL:
        raise ContractViolationError(f"{name} is not a probability vector: {v}")
    return v


def soft_pseudo_label(p, s, alpha):
    """Convex blend alpha*p + (1-alpha)*s of two probability vectors."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    p = _check_prob_vector(p, "classifier probabilities")
    s = _check_prob_vector(s, "prototype scores")
    if p.shape != s.shape:
        raise DimensionError(f"length mismatch: p {p.shape} vs s {s.shape}")
    return alpha * p + (1.0 - alpha) * s


def hard_pseudo_label(q, y, threshold, num_classes=None):
    """Map a soft label to Class(argmax) / Class(original) / OOD.

    Rules, in order: (1) max q strictly above ``threshold`` takes the
    argmax (ties resolve to the lowest class index); (2) q at the original
    label strictly above 1/K keeps the original; (3) otherwise OOD.
    ``threshold`` is deliberately not range-checked so boundary behaviour
    (e.g. threshold > 1 making rule 1 unreachable) stays testable.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionError(f"soft label must be a vector, got shape {q.shape}")
    k = q.shape[0]
    if num_classes is not None and num_classes != k:
        raise DimensionError(f"soft label has {k} entries, expected {num_classes}")
    if not 0 <= y < k:
        raise ContractViolationError(f"original label {y} outside 0..{k - 1}")
    if float(q.max()) > threshold:
        return PseudoLabel(int(q.argmax()), Rule.ARGMAX)
    if float(q[y]) > 1.0 / k:
        return PseudoLabel(int(y), Rule.KEEP_ORIGINAL)
    return PseudoLabel(None, Rule.OOD)


def correct_batch(p, s, y, alpha, threshold):
    """Elementwise soft+hard correction over aligned batch arrays.

    Returns labels (-1 for OOD), per-sample rule provenance, and the
    per-rule counts used by epoch metrics.
    """
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if p.shape != s.shape or p.ndim != 2 or y.shape != (p.shape[0],):
        raise DimensionError(
            f"misaligned batch: p {p.shape}, s {s.shape}, y {y.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    n, k = p.shape
    if y.size and (y.min() < 0 or y.max() >= k):
        raise ContractViolationError("original labels outside 0..K-1")

    q = alpha * p + (1.0 - alpha) * s
    q_max = q.max(axis=1)
    q_arg = q.argmax(axis=1)  # first occurrence = lowest class index
    q_at_y = q[np.arange(n), y]

    take_argmax = q_max > threshold
    keep = ~take_argmax & (q_at_y > 1.0 / k)
    ood = ~take_argmax & ~keep

    labels = np.where(take_argmax, q_arg, np.where(keep, y, OOD)).astype(np.int64)
    rules = np.full(n, Rule.OOD, dtype=np.uint8)
    rules[take_argmax] = Rule.ARGMAX
    rules[keep] = Rule.KEEP_ORIGINAL
    return BatchCorrection(
        labels=labels,
        rules=rules,
        n_argmax=int(take_argmax.sum()),
        n_kept=int(keep.sum()),
        n_ood=int(ood.sum()),
    )
