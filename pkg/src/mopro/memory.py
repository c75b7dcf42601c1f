"""Cross-batch stores: the momentum-embedding queue and the prototype bank.

Both are single-writer per training step; loss code reads snapshots taken
at batch start (``as_matrix`` / ``prototype_matrix`` return copies).
"""

import numpy as np

from . import _kernels as K
from .errors import (
    ConfigError,
    ContractViolationError,
    DimensionError,
    InitializationError,
    StateError,
)

_UNIT_TOL = 1e-6


def _check_unit_rows(arr, what):
    norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
    bad = np.abs(norms - 1.0) > _UNIT_TOL
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ContractViolationError(
            f"{what} must be unit-norm; row {i} has norm {norms[i]:.9f}"
        )


class EmbeddingQueue:
    """Fixed-capacity FIFO ring of unit-norm momentum embeddings."""

    def __init__(self, capacity, dim):
        if capacity < 1:
            raise ConfigError(f"queue capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._buf = np.zeros((self.capacity, self.dim))
        self._next = 0
        self._count = 0

    def __len__(self):
        return self._count

    @property
    def full(self):
        return self._count == self.capacity

    def enqueue(self, z_batch):
        """Append rows in order; oldest entries are evicted past capacity."""
        z = np.atleast_2d(np.asarray(z_batch, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise DimensionError(f"queue stores {self.dim}-vectors, got {z.shape}")
        _check_unit_rows(z, "queued embeddings")
        if z.shape[0] >= self.capacity:
            # only the newest `capacity` rows can survive
            self._buf[:] = z[-self.capacity:]
            self._next = 0
            self._count = self.capacity
            return
        end = self._next + z.shape[0]
        if end <= self.capacity:
            self._buf[self._next:end] = z
        else:
            split = self.capacity - self._next
            self._buf[self._next:] = z[:split]
            self._buf[: end - self.capacity] = z[split:]
        self._next = end % self.capacity
        self._count = min(self._count + z.shape[0], self.capacity)

    def as_matrix(self):
        """Current contents, oldest row first."""
        if self._count < self.capacity:
            return self._buf[: self._count].copy()
        return np.concatenate([self._buf[self._next:], self._buf[: self._next]])

    # -- checkpoint support --

    def state(self):
        return self._buf.copy(), self._next, self._count

    def restore(self, buf, nxt, count):
        if buf.shape != self._buf.shape:
            raise DimensionError(
                f"queue buffer shape {buf.shape} does not match {self._buf.shape}"
            )
        self._buf = buf.copy()
        self._next = int(nxt)
        self._count = int(count)


class PrototypeBank:
    """Per-class EMA of embeddings, exposed re-normalized to the unit sphere.

    The raw accumulator follows c_k <- m*c_k + (1-m)*z exactly (so its
    trajectory has a closed form under constant targets); consumers only
    ever see the row-normalized matrix, keeping similarity scores true
    cosines.
    """

    def __init__(self, num_classes, dim, momentum):
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"prototype momentum must be in [0, 1), got {momentum}")
        self.num_classes = int(num_classes)
        self.dim = int(dim)
        self.momentum = float(momentum)
        self._raw = np.zeros((self.num_classes, self.dim))
        self._ready = np.zeros(self.num_classes, dtype=bool)

    @property
    def initialized(self):
        return bool(self._ready.all())

    @property
    def initialized_mask(self):
        return self._ready.copy()

    @property
    def raw(self):
        """Pre-normalization EMA state (checkpoint payload)."""
        return self._raw.copy()

    def init_prototypes(self, embeddings, labels):
        """Set each prototype to the normalized per-class embedding mean."""
        z = np.asarray(embeddings, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if z.ndim != 2 or z.shape[1] != self.dim or y.shape != (z.shape[0],):
            raise DimensionError(
                f"init expects ({y.shape[0]}, {self.dim}) embeddings, got {z.shape}"
            )
        raw = np.zeros_like(self._raw)
        for k in range(self.num_classes):
            members = y == k
            if not members.any():
                raise InitializationError(f"class {k} has no samples to initialize from")
            mean = z[members].mean(axis=0)
            norm = float(np.linalg.norm(mean))
            if norm <= 0.0:
                raise InitializationError(
                    f"class {k} embeddings average to a zero vector"
                )
            raw[k] = mean / norm
        self._raw = raw
        self._ready[:] = True

    def update_prototype(self, k, z):
        """EMA step for one class from one unit-norm embedding."""
        if not 0 <= k < self.num_classes:
            raise DimensionError(f"class {k} outside 0..{self.num_classes - 1}")
        if not self._ready[k]:
            raise StateError(f"prototype {k} not initialized; run warm-up first")
        z = np.asarray(z, dtype=np.float64).reshape(1, -1)
        if z.shape[1] != self.dim:
            raise DimensionError(f"prototype dim is {self.dim}, got {z.shape[1]}")
        _check_unit_rows(z, "prototype updates")
        K.proto_ema_update(self._raw, z, np.array([k], dtype=np.int64), self.momentum)

    def update_batch(self, labels, z_batch):
        """Sequential EMA over a batch; labels < 0 (OOD) are skipped."""
        y = np.ascontiguousarray(labels, dtype=np.int64)
        z = np.ascontiguousarray(z_batch, dtype=np.float64)
        if z.ndim != 2 or z.shape != (y.shape[0], self.dim):
            raise DimensionError(f"update_batch got z {z.shape} for {y.shape[0]} labels")
        used = y[y >= 0]
        if used.size and not self._ready[used].all():
            k = int(used[~self._ready[used]][0])
            raise StateError(f"prototype {k} not initialized; run warm-up first")
        if used.size:
            _check_unit_rows(z[y >= 0], "prototype updates")
        K.proto_ema_update(self._raw, z, y, self.momentum)

    def prototype_matrix(self):
        """Unit-norm prototype rows (copy)."""
        if not self.initialized:
            missing = int(np.flatnonzero(~self._ready)[0])
            raise StateError(f"prototype {missing} not initialized; run warm-up first")
        norms = np.linalg.norm(self._raw, axis=1, keepdims=True)
        return self._raw / norms

    def prototype_scores(self, z, temperature):
        """Softmax over cosine similarities to every prototype, scaled by 1/T."""
        if temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {temperature}")
        protos = self.prototype_matrix()
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z2 = np.ascontiguousarray(z.reshape(1, -1) if single else z)
        if z2.shape[1] != self.dim:
            raise DimensionError(f"prototype dim is {self.dim}, got {z2.shape[1]}")
        logits = K.matmul_fwd(z2, protos.T) / temperature
        scores = K.softmax_fwd(np.ascontiguousarray(logits))
        return scores[0] if single else scores

    # -- checkpoint support --

    def restore(self, raw, ready):
        if raw.shape != self._raw.shape:
            raise DimensionError(
                f"prototype block shape {raw.shape} does not match {self._raw.shape}"
            )
        self._raw = raw.copy()
        self._ready = ready.astype(bool).copy()
