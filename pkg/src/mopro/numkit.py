"""Dense float64 tensors with reverse-mode gradients.

A Tensor wraps a C-contiguous float64 array (0, 1 or 2 dimensional) and
remembers how it was produced; calling :func:`backward` on a scalar walks
the graph in reverse topological order and accumulates gradients into
every leaf created with ``requires_grad=True``.  The numeric heavy lifting
lives in :mod:`mopro._kernels`, which dispatches to the compiled core or
the NumPy fallback.

The observable contract for every op's backward pass is agreement with
central finite differences; :func:`check_gradient` is the oracle used by
the test suite.
"""

import numpy as np

from . import _kernels as K
from .errors import DegenerateInputError, DimensionError, NumericError


class Tensor:
    """Array plus optional gradient buffer and graph bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_needs")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        if arr.ndim > 2:
            raise DimensionError(f"tensors are at most 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._needs = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got {self.data.shape}")
        return float(self.data.ravel()[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x):
    """Pass Tensors through; wrap arrays/lists as constants."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p._needs for p in parents):
        out._needs = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t, g):
    # g must be freshly owned by the caller; aliasing out.grad corrupts
    # siblings that share the buffer.
    if not t._needs:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def backward(loss):
    """Reverse pass from a scalar Tensor; fills .grad on requiring leaves."""
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product with gradients to both operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul shapes do not chain: {a.data.shape} x {b.data.shape}"
        )
    out_data = K.matmul_fwd(a.data, b.data)

    def bwd(g):
        if a._needs:
            _accum(a, K.matmul_bwd_a(g, b.data))
        if b._needs:
            _accum(b, K.matmul_bwd_b(a.data, g))

    return _make(out_data, (a, b), bwd)


def add_bias(x, b):
    """Row-broadcast addition: x + b with b spanning the last axis."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise DimensionError(f"bias shape {b.data.shape} does not fit {x.data.shape}")
    out_data = x.data + b.data

    def bwd(g):
        _accum(x, g.copy())
        _accum(b, g.sum(axis=0) if g.ndim == 2 else g.copy())

    return _make(out_data, (x, b), bwd)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, g.copy())
        _accum(b, g.copy())

    return _make(out_data, (a, b), bwd)


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    out_data = x.data * c

    def bwd(g):
        _accum(x, g * c)

    return _make(out_data, (x,), bwd)


def _rows(arr):
    return arr.reshape(1, -1) if arr.ndim == 1 else arr


def relu(x):
    x = as_tensor(x)
    x2 = _rows(x.data)
    out_data = K.relu_fwd(x2).reshape(x.data.shape)

    def bwd(g):
        gx = K.relu_bwd(_rows(out_data), _rows(g))
        _accum(x, gx.reshape(x.data.shape))

    return _make(out_data, (x,), bwd)


def l2_normalize(x):
    """Scale every row to unit Euclidean norm.

    Backward applies the normalization Jacobian (I - yy^T)/|x| row by row.
    Zero-norm rows are rejected rather than silently returning NaN.
    """
    x = as_tensor(x)
    x2 = _rows(x.data)
    y2, inv = K.l2norm_fwd(x2)
    if not np.all(inv > 0.0):
        bad = int(np.flatnonzero(inv == 0.0)[0])
        raise DegenerateInputError(f"row {bad} has zero norm and cannot be normalized")
    out_data = y2.reshape(x.data.shape)

    def bwd(g):
        gx = K.l2norm_bwd(y2, inv, _rows(g))
        _accum(x, gx.reshape(x.data.shape))

    return _make(out_data, (x,), bwd)


def softmax_rows(x):
    """Row softmax with max-subtraction; rows sum to one."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    x2 = _rows(x.data)
    p2 = K.softmax_fwd(x2)
    out_data = p2.reshape(x.data.shape)

    def bwd(g):
        gx = K.softmax_bwd(p2, _rows(g))
        _accum(x, gx.reshape(x.data.shape))

    return _make(out_data, (x,), bwd)


def cross_entropy_rows(logits, targets):
    """Per-row -log softmax(logits) picked at the target column (fused)."""
    logits = as_tensor(logits)
    t = np.ascontiguousarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.ndim != 1 or t.shape[0] != logits.data.shape[0]:
        raise DimensionError(
            f"cross_entropy_rows got logits {logits.data.shape}, targets {t.shape}"
        )
    losses, probs = K.xent_fwd(logits.data, t)

    def bwd(g):
        _accum(logits, K.xent_bwd(probs, t, g))

    return _make(losses, (logits,), bwd)


def pick_rows(x, idx):
    """Gather one column per row: out[i] = x[i, idx[i]]."""
    x = as_tensor(x)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if x.data.ndim != 2 or idx.shape != (x.data.shape[0],):
        raise DimensionError(f"pick_rows got x {x.data.shape}, idx {idx.shape}")
    rows = np.arange(x.data.shape[0])
    out_data = x.data[rows, idx].copy()

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        _accum(x, gx)

    return _make(out_data, (x,), bwd)


def clamp_min(x, floor):
    x = as_tensor(x)
    floor = float(floor)
    out_data = np.maximum(x.data, floor)

    def bwd(g):
        _accum(x, np.where(x.data > floor, g, 0.0))

    return _make(out_data, (x,), bwd)


def log(x):
    x = as_tensor(x)
    out_data = np.log(x.data)

    def bwd(g):
        _accum(x, g / x.data)

    return _make(out_data, (x,), bwd)


def concat_cols(a, b):
    """Column concatenation; 1-D inputs are treated as single columns."""
    a, b = as_tensor(a), as_tensor(b)
    a2 = a.data.reshape(-1, 1) if a.data.ndim == 1 else a.data
    b2 = b.data.reshape(-1, 1) if b.data.ndim == 1 else b.data
    if a2.shape[0] != b2.shape[0]:
        raise DimensionError(f"concat_cols row counts differ: {a2.shape} vs {b2.shape}")
    out_data = np.concatenate([a2, b2], axis=1)
    na = a2.shape[1]

    def bwd(g):
        _accum(a, g[:, :na].reshape(a.data.shape).copy())
        _accum(b, g[:, na:].reshape(b.data.shape).copy())

    return _make(out_data, (a, b), bwd)


def rowwise_dot(a, b):
    """Per-row inner product of two equally shaped matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise DimensionError(f"rowwise_dot shapes: {a.data.shape} vs {b.data.shape}")
    out_data = np.einsum("ij,ij->i", a.data, b.data)

    def bwd(g):
        if a._needs:
            _accum(a, b.data * g[:, None])
        if b._needs:
            _accum(b, a.data * g[:, None])

    return _make(out_data, (a, b), bwd)


def sum_all(x):
    x = as_tensor(x)
    out_data = np.asarray(x.data.sum())

    def bwd(g):
        _accum(x, np.full_like(x.data, g.ravel()[0]))

    return _make(out_data, (x,), bwd)


def mean_all(x):
    x = as_tensor(x)
    n = x.data.size
    out_data = np.asarray(x.data.sum() / n)

    def bwd(g):
        _accum(x, np.full_like(x.data, g.ravel()[0] / n))

    return _make(out_data, (x,), bwd)


def as_row(x):
    """View a 1-D tensor as a single-row matrix (2-D passes through)."""
    x = as_tensor(x)
    if x.data.ndim == 2:
        return x
    out_data = x.data.reshape(1, -1)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape).copy())

    return _make(out_data, (x,), bwd)


def masked_mean(x, mask):
    """Mean of a vector over the True positions of a boolean mask."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    if x.data.ndim != 1 or mask.shape != x.data.shape:
        raise DimensionError(f"masked_mean got x {x.data.shape}, mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise DimensionError("masked_mean over an empty mask")
    out_data = np.asarray(x.data[mask].sum() / count)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[mask] = g.ravel()[0] / count
        _accum(x, gx)

    return _make(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def check_gradient(f, x, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor.  The error per coordinate is
    |analytic - central| / max(1, |analytic|); non-finite differences come
    back as inf so callers see them as failures.
    """
    x.grad = None
    out = f(x)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).data.ravel()[0]
        flat[i] = orig - h
        fm = f(x).data.ravel()[0]
        flat[i] = orig
        central = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)[i]
        if not np.isfinite(central) or not np.isfinite(a):
            return float("inf")
        err = abs(a - central) / max(1.0, abs(a))
        if err > worst:
            worst = err
    return worst


# ---------------------------------------------------------------------------
# seeded randomness
# ---------------------------------------------------------------------------

class Rng:
    """Seeded random stream (PCG64): equal seed and key give equal draws.

    ``child(tag)`` derives an independent, reproducible substream, used to
    keep e.g. dataset cluster geometry fixed while sample noise varies.
    """

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence((self.seed,) + self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, tag):
        return Rng(self.seed, self.key + (int(tag),))

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice_weighted(self, n, size, p):
        return self._gen.choice(n, size=size, p=p, replace=True)

    # -- state round-trip for checkpoints --

    def state_bytes(self):
        st = self._gen.bit_generator.state
        return (
            st["state"]["state"].to_bytes(16, "little")
            + st["state"]["inc"].to_bytes(16, "little")
            + int(st["has_uint32"]).to_bytes(1, "little")
            + int(st["uinteger"]).to_bytes(8, "little")
        )

    def set_state_bytes(self, raw):
        if len(raw) != 41:
            raise DimensionError(f"rng state must be 41 bytes, got {len(raw)}")
        self._gen.bit_generator.state = {
            "bit_generator": "PCG64",
            "state": {
                "state": int.from_bytes(raw[0:16], "little"),
                "inc": int.from_bytes(raw[16:32], "little"),
            },
            "has_uint32": int.from_bytes(raw[32:33], "little"),
            "uinteger": int.from_bytes(raw[33:41], "little"),
        }
