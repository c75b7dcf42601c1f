"""The three training losses and their OOD-masked combination.

Cross-entropy and the prototype contrast average over in-distribution
samples only; the instance contrast averages over the whole batch, OOD
included, so outliers keep getting pushed apart.  Prototypes, queue
entries and momentum embeddings enter as constants: gradients flow to the
online embeddings alone.
"""

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import ContractViolationError, StateError

CE_PROB_FLOOR = 1e-12


class WarningCounter:
    """Counts numeric clamps so silent degradation stays visible."""

    def __init__(self):
        self.count = 0

    def add(self, n=1):
        self.count += int(n)

    def reset(self):
        self.count = 0


numeric_warnings = WarningCounter()


@dataclass(frozen=True)
class LossBreakdown:
    """Batch-mean loss terms and their weighted total."""

    l_ce: float
    l_pro: float
    l_ins: float
    lambda_pro: float
    lambda_ins: float
    total: float


def loss_ce(p, pseudo_label):
    """-log p at the pseudo-label class; p clamped at a tiny floor."""
    label = _require_class(pseudo_label)
    p = nk.as_tensor(p)
    row = nk.as_row(p)
    picked = nk.pick_rows(row, np.array([label], dtype=np.int64))
    if float(picked.data[0]) < CE_PROB_FLOOR:
        numeric_warnings.add()
    return nk.scale(nk.mean_all(nk.log(nk.clamp_min(picked, CE_PROB_FLOOR))), -1.0)


def loss_proto(z, bank, pseudo_label, temperature):
    """Contrast one embedding against all class prototypes at its pseudo-label."""
    label = _require_class(pseudo_label)
    protos = bank.prototype_matrix()  # constants within the step
    z = nk.as_tensor(z)
    logits = nk.scale(nk.matmul(nk.as_row(z), protos.T), 1.0 / temperature)
    losses = nk.cross_entropy_rows(logits, np.array([label], dtype=np.int64))
    return nk.mean_all(losses)


def loss_inst(z, z_pos, queue, temperature):
    """InfoNCE: the momentum view is the positive, queue entries the negatives."""
    if not queue.full:
        raise StateError(
            f"instance loss needs a full queue ({len(queue)}/{queue.capacity})"
        )
    z = nk.as_tensor(z)
    z_row = nk.as_row(z)
    pos_row = np.asarray(z_pos, dtype=np.float64).reshape(1, -1)
    negatives = queue.as_matrix()
    pos = nk.rowwise_dot(z_row, nk.Tensor(pos_row))
    neg = nk.matmul(z_row, negatives.T)
    logits = nk.scale(nk.concat_cols(pos, neg), 1.0 / temperature)
    losses = nk.cross_entropy_rows(logits, np.zeros(1, dtype=np.int64))
    return nk.mean_all(losses)


def loss_total(p, z, z_momentum, pseudo_labels, bank, queue, *,
               temperature, lambda_pro=1.0, lambda_ins=1.0):
    """Masked combination of the three terms over one batch.

    ``pseudo_labels`` uses -1 for OOD.  CE and the prototype term average
    over in-distribution rows (0 when there are none); the instance term
    averages over every row and is 0 until the queue is full (cold start)
    or when ``lambda_ins`` is 0.  ``bank=None`` (warm-up) likewise zeroes
    the prototype term.

    Returns (LossBreakdown, total Tensor for the backward pass).
    """
    labels = np.asarray(pseudo_labels, dtype=np.int64)
    in_mask = labels >= 0
    safe_labels = np.where(in_mask, labels, 0)
    terms = []

    if in_mask.any():
        picked = nk.pick_rows(p, safe_labels)
        numeric_warnings.add(int((picked.data[in_mask] < CE_PROB_FLOOR).sum()))
        ce_vec = nk.scale(nk.log(nk.clamp_min(picked, CE_PROB_FLOOR)), -1.0)
        l_ce = nk.masked_mean(ce_vec, in_mask)
        terms.append(l_ce)
    else:
        l_ce = None

    if lambda_pro != 0.0 and bank is not None and in_mask.any():
        protos = bank.prototype_matrix()
        logits = nk.scale(nk.matmul(z, protos.T), 1.0 / temperature)
        pro_vec = nk.cross_entropy_rows(logits, safe_labels)
        l_pro = nk.masked_mean(pro_vec, in_mask)
        terms.append(nk.scale(l_pro, lambda_pro))
    else:
        l_pro = None

    if lambda_ins != 0.0 and queue is not None and queue.full:
        pos = nk.rowwise_dot(z, nk.Tensor(np.asarray(z_momentum, dtype=np.float64)))
        neg = nk.matmul(z, queue.as_matrix().T)
        logits = nk.scale(nk.concat_cols(pos, neg), 1.0 / temperature)
        ins_vec = nk.cross_entropy_rows(logits, np.zeros(labels.shape[0], dtype=np.int64))
        l_ins = nk.mean_all(ins_vec)
        terms.append(nk.scale(l_ins, lambda_ins))
    else:
        l_ins = None

    if terms:
        total = terms[0]
        for t in terms[1:]:
            total = nk.add(total, t)
    else:
        total = nk.Tensor(0.0)

    ce_f = float(l_ce.data) if l_ce is not None else 0.0
    pro_f = float(l_pro.data) if l_pro is not None else 0.0
    ins_f = float(l_ins.data) if l_ins is not None else 0.0
    breakdown = LossBreakdown(
        l_ce=ce_f,
        l_pro=pro_f,
        l_ins=ins_f,
        lambda_pro=lambda_pro,
        lambda_ins=lambda_ins,
        total=ce_f + lambda_pro * pro_f + lambda_ins * ins_f,
    )
    return breakdown, total


def _require_class(pseudo_label):
    """Accept a PseudoLabel or a plain class index; reject OOD."""
    label = getattr(pseudo_label, "label", pseudo_label)
    if label is None or int(label) < 0:
        raise ContractViolationError(
            "OOD samples must be masked out before class-specific losses"
        )
    return int(label)
