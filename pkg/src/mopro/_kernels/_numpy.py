"""NumPy implementation of the kernel API.

This is the fallback backend: every function here has a compiled twin in
``_fast.pyx`` with the same signature and semantics.  All arrays are
C-contiguous float64; integer label arrays are int64.  Reductions may
round differently from the compiled backend (NumPy uses pairwise
summation), so cross-backend agreement is close but not bitwise.
"""

import numpy as np

name = "python"


# ---- dense products (BLAS-backed in both backends) ----

def matmul_fwd(a, b):
    return a @ b


def matmul_bwd_a(gc, b):
    return gc @ b.T


def matmul_bwd_b(a, gc):
    return a.T @ gc


# ---- elementwise / rowwise ops ----

def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(y, gy):
    return np.where(y > 0.0, gy, 0.0)


def l2norm_fwd(x):
    """Row l2-normalization. Returns (normalized rows, 1/norm per row)."""
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    inv = np.empty_like(norms)
    nonzero = norms > 0.0
    inv[nonzero] = 1.0 / norms[nonzero]
    inv[~nonzero] = 0.0  # caller rejects zero rows before use
    return x * inv[:, None], inv


def l2norm_bwd(y, inv, gy):
    # d/dx of x/|x| applied to gy: (gy - y (y.gy)) / |x|
    dots = np.einsum("ij,ij->i", gy, y)
    return (gy - y * dots[:, None]) * inv[:, None]


def softmax_fwd(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(p, gp):
    dots = np.einsum("ij,ij->i", gp, p)
    return p * (gp - dots[:, None])


def xent_fwd(logits, targets):
    """Fused -log softmax picked at the target column.

    Returns (per-row losses, softmax probabilities); the probabilities are
    reused by the backward pass.
    """
    m = logits.max(axis=1)
    e = np.exp(logits - m[:, None])
    s = e.sum(axis=1)
    probs = e / s[:, None]
    rows = np.arange(logits.shape[0])
    losses = np.log(s) + m - logits[rows, targets]
    return losses, probs


def xent_bwd(probs, targets, glosses):
    g = probs * glosses[:, None]
    rows = np.arange(probs.shape[0])
    g[rows, targets] -= glosses
    return g


# ---- moving-average updates (elementwise; bitwise-equal across backends) ----

def ema_update(dst, src, m):
    """In place: dst <- m*dst + (1-m)*src."""
    np.multiply(dst, m, out=dst)
    dst += (1.0 - m) * src


def proto_ema_update(protos, z, labels, m):
    """Sequential per-sample prototype update; rows with label < 0 are skipped.

    Order matters when a batch carries several samples of one class, so
    this runs sample by sample, exactly like the compiled version.
    """
    for i in range(labels.shape[0]):
        k = labels[i]
        if k >= 0:
            protos[k] *= m
            protos[k] += (1.0 - m) * z[i]
