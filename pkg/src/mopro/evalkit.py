"""Verification instruments: correction scoring, probes, calibration, metrics IO.

Everything here is read-only analytics over ground truth the synthetic
datasets carry; nothing feeds back into training.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .errors import ConfigError, ContractViolationError, DimensionError
from .noise import OOD, Rule
from .numkit import Rng

#: column order of the metrics table (CSV header and JSON keys)
METRIC_COLUMNS = (
    "epoch", "l_ce", "l_pro", "l_ins", "total",
    "pseudo_acc", "ood_recall", "ood_precision", "knn_acc", "calib_err",
)

DEFAULT_CALIBRATION_BINS = 15


@dataclass(frozen=True)
class CorrectionReport:
    """How well pseudo-labels match ground truth.

    ``pseudo_accuracy`` scores all in-distribution samples (a do-nothing
    corrector scores 1 - noise_rate).  ``correction_recall`` restricts to
    corrupted samples; ``correction_precision`` restricts to samples whose
    label the rule actually changed.  Undefined rates (empty denominator)
    are NaN with the matching ``*_defined`` flag cleared.
    """

    n: int
    pseudo_accuracy: float
    pseudo_accuracy_defined: bool
    correction_precision: float
    correction_precision_defined: bool
    correction_recall: float
    correction_recall_defined: bool
    ood_precision: float
    ood_precision_defined: bool
    ood_recall: float
    ood_recall_defined: bool
    n_argmax: int
    n_kept: int
    n_ood: int


def _rate(num, den):
    if den == 0:
        return float("nan"), False
    return num / den, True


def score_corrections(pseudo_labels, rules, dataset):
    """Score one correction pass against the dataset's ground truth."""
    labels = np.asarray(pseudo_labels, dtype=np.int64)
    rules = np.asarray(rules, dtype=np.uint8)
    if labels.shape != (dataset.n,) or rules.shape != (dataset.n,):
        raise DimensionError(
            f"expected {dataset.n} pseudo-labels/rules, got {labels.shape}/{rules.shape}"
        )
    true = dataset.true_labels
    in_dist = ~dataset.is_ood
    pred_ood = labels == OOD

    acc, acc_def = _rate(int((labels[in_dist] == true[in_dist]).sum()), int(in_dist.sum()))

    corrupted = in_dist & (dataset.noisy_labels != true)
    rec, rec_def = _rate(int((labels[corrupted] == true[corrupted]).sum()),
                         int(corrupted.sum()))
    changed = in_dist & ~pred_ood & (labels != dataset.noisy_labels)
    prec, prec_def = _rate(int((labels[changed] == true[changed]).sum()),
                           int(changed.sum()))

    ood_tp = int((pred_ood & dataset.is_ood).sum())
    ood_prec, ood_prec_def = _rate(ood_tp, int(pred_ood.sum()))
    ood_rec, ood_rec_def = _rate(ood_tp, int(dataset.is_ood.sum()))

    return CorrectionReport(
        n=dataset.n,
        pseudo_accuracy=acc, pseudo_accuracy_defined=acc_def,
        correction_precision=prec, correction_precision_defined=prec_def,
        correction_recall=rec, correction_recall_defined=rec_def,
        ood_precision=ood_prec, ood_precision_defined=ood_prec_def,
        ood_recall=ood_rec, ood_recall_defined=ood_rec_def,
        n_argmax=int((rules == Rule.ARGMAX).sum()),
        n_kept=int((rules == Rule.KEEP_ORIGINAL).sum()),
        n_ood=int((rules == Rule.OOD).sum()),
    )


# ---------------------------------------------------------------------------
# representation probes
# ---------------------------------------------------------------------------

def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0  # zero rows keep zero similarity
    return x / norms


def knn_probe(train_embeddings, train_labels, test_embeddings, test_labels, k=11):
    """Cosine k-nearest-neighbour vote accuracy on frozen embeddings."""
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"k must be odd and >= 1, got {k}")
    train_y = np.asarray(train_labels, dtype=np.int64)
    test_y = np.asarray(test_labels, dtype=np.int64)
    if train_y.size == 0:
        raise DimensionError("knn_probe needs a nonempty train set")
    k = min(k, train_y.size)
    tr = _unit_rows(train_embeddings)
    te = _unit_rows(test_embeddings)
    sims = K.matmul_fwd(te, tr.T)
    num_classes = int(max(train_y.max(), test_y.max())) + 1
    correct = 0
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    for i in range(te.shape[0]):
        votes = np.bincount(train_y[order[i]], minlength=num_classes)
        if int(votes.argmax()) == test_y[i]:  # argmax ties -> lowest class
            correct += 1
    return correct / te.shape[0]


def linear_probe(train_embeddings, train_labels, test_embeddings, test_labels,
                 epochs=100, lr=0.1, batch_size=128, seed=0):
    """Multinomial logistic regression on frozen embeddings; returns test accuracy.

    Deterministic given the seed; non-convergence is not an error, the
    final accuracy is reported regardless.
    """
    x_tr = np.ascontiguousarray(train_embeddings, dtype=np.float64)
    y_tr = np.asarray(train_labels, dtype=np.int64)
    x_te = np.ascontiguousarray(test_embeddings, dtype=np.float64)
    y_te = np.asarray(test_labels, dtype=np.int64)
    if x_tr.shape[0] == 0:
        raise DimensionError("linear_probe needs a nonempty train set")
    num_classes = int(max(y_tr.max(), y_te.max())) + 1
    dim = x_tr.shape[1]
    w = np.zeros((dim, num_classes))
    b = np.zeros(num_classes)
    rng = Rng(seed)
    n = x_tr.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            probs = K.softmax_fwd(np.ascontiguousarray(xb @ w + b))
            probs[np.arange(idx.size), yb] -= 1.0
            probs /= idx.size
            w -= lr * (xb.T @ probs)
            b -= lr * probs.sum(axis=0)
    pred = (x_te @ w + b).argmax(axis=1)
    return float((pred == y_te).mean())


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationReport:
    """Equal-width confidence binning and the resulting l2 gap."""

    bins: int
    bin_confidence: np.ndarray  # mean confidence per bin (NaN when empty)
    bin_accuracy: np.ndarray    # empirical accuracy per bin (NaN when empty)
    bin_counts: np.ndarray
    error: float


def calibration_error(confidences, correct, bins=DEFAULT_CALIBRATION_BINS):
    """Root-mean-square gap between confidence and accuracy over bins.

    Bins are equal-width on [0, 1] with right-inclusive edges; empty bins
    contribute nothing.  error = sqrt(sum_b (n_b/N) (conf_b - acc_b)^2).
    """
    conf = np.asarray(confidences, dtype=np.float64)
    hits = np.asarray(correct, dtype=bool)
    if conf.ndim != 1 or conf.shape != hits.shape:
        raise DimensionError(f"confidences {conf.shape} vs flags {hits.shape}")
    if conf.size == 0:
        raise DimensionError("calibration_error needs at least one sample")
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    if (conf < 0.0).any() or (conf > 1.0).any():
        raise ContractViolationError("confidences must lie in [0, 1]")

    edges = np.arange(1, bins) / bins  # upper edges of all but the last bin
    idx = np.searchsorted(edges, conf, side="left")
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    hit_sum = np.bincount(idx, weights=hits.astype(np.float64), minlength=bins)

    mean_conf = np.full(bins, np.nan)
    mean_acc = np.full(bins, np.nan)
    nonempty = counts > 0
    mean_conf[nonempty] = conf_sum[nonempty] / counts[nonempty]
    mean_acc[nonempty] = hit_sum[nonempty] / counts[nonempty]

    gaps = np.zeros(bins)
    gaps[nonempty] = mean_conf[nonempty] - mean_acc[nonempty]
    error = math.sqrt(float(((counts / conf.size) * gaps**2).sum()))
    return CalibrationReport(
        bins=int(bins),
        bin_confidence=mean_conf,
        bin_accuracy=mean_acc,
        bin_counts=counts,
        error=error,
    )


# ---------------------------------------------------------------------------
# metrics emission
# ---------------------------------------------------------------------------

def _render(value):
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def emit_metrics(records, path, fmt="csv"):
    """Write per-epoch records as CSV or a JSON array (17 significant digits).

    ``records`` is an iterable of mappings; only :data:`METRIC_COLUMNS`
    are emitted, in order, so the two formats stay field-for-field equal.
    """
    rows = [{c: rec[c] for c in METRIC_COLUMNS} for rec in records]
    if fmt == "csv":
        lines = [",".join(METRIC_COLUMNS)]
        for row in rows:
            lines.append(",".join(_render(row[c]) for c in METRIC_COLUMNS))
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = [
            {c: (int(row[c]) if c == "epoch" else float(row[c])) for c in METRIC_COLUMNS}
            for row in rows
        ]
        text = json.dumps(payload, indent=2, allow_nan=True) + "\n"
    else:
        raise ConfigError(f"unknown metrics format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def parse_metrics_csv(path):
    """Read a metrics CSV back into a list of dicts (floats, int epoch)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise DimensionError(f"{path}: empty metrics file")
    header = tuple(lines[0].split(","))
    records = []
    for ln in lines[1:]:
        cells = ln.split(",")
        rec = {}
        for name, cell in zip(header, cells):
            rec[name] = int(cell) if name == "epoch" else float(cell)
        records.append(rec)
    return header, records
