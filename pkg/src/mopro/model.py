"""Encoder MLP, projection head, classifier head, and their EMA twin.

The encoder maps inputs to a representation ``v``; the projection head
maps ``v`` to a unit-norm low-dimensional embedding ``z``; the classifier
turns ``v`` into class probabilities.  The momentum twin mirrors
encoder+projection with exponentially averaged parameters and never
receives gradients.
"""

import math

import numpy as np

from . import _kernels as K
from . import numkit as nk
from .errors import ConfigError, DimensionError, StructuralError


class MLP:
    """Fully connected stack: rectifier between layers, linear output."""

    def __init__(self, widths, rng):
        if len(widths) < 2:
            raise ConfigError(f"an MLP needs at least two widths, got {widths}")
        self.widths = tuple(int(w) for w in widths)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(
                nk.Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
            )
            self.biases.append(
                nk.Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True)
            )

    @property
    def in_dim(self):
        return self.widths[0]

    @property
    def out_dim(self):
        return self.widths[-1]

    def forward(self, x):
        """Graph-building forward pass; x is a Tensor of shape (b, in_dim)."""
        x = nk.as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.in_dim:
            raise DimensionError(
                f"MLP expects (*, {self.in_dim}) inputs, got {x.data.shape}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = nk.add_bias(nk.matmul(h, w), b)
            if i != last:
                h = nk.relu(h)
        return h

    def forward_array(self, x):
        """Graph-free forward pass on a plain array (twin/eval paths)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(
                f"MLP expects (*, {self.in_dim}) inputs, got {x.shape}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = K.matmul_fwd(h, w.data) + b.data
            if i != last:
                h = K.relu_fwd(h)
        return h

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


class EncoderNet(MLP):
    """Feature extractor: input -> hidden layers -> representation v."""

    def __init__(self, input_dim, hidden_dims, embed_dim, rng):
        super().__init__((input_dim, *hidden_dims, embed_dim), rng)


class ProjectionHead(MLP):
    """One-hidden-layer MLP whose output rows are l2-normalized."""

    def __init__(self, embed_dim, hidden_dim, proj_dim, rng):
        super().__init__((embed_dim, hidden_dim, proj_dim), rng)

    def forward(self, v):
        return nk.l2_normalize(super().forward(v))

    def forward_array(self, v):
        out, _ = K.l2norm_fwd(super().forward_array(v))
        return out


class ClassifierHead:
    """Single affine layer followed by row softmax."""

    def __init__(self, embed_dim, num_classes, rng):
        bound = 1.0 / math.sqrt(embed_dim)
        self.w = nk.Tensor(rng.uniform(-bound, bound, (embed_dim, num_classes)), requires_grad=True)
        self.b = nk.Tensor(rng.uniform(-bound, bound, num_classes), requires_grad=True)

    @property
    def in_dim(self):
        return self.w.data.shape[0]

    @property
    def num_classes(self):
        return self.w.data.shape[1]

    def forward(self, v):
        v = nk.as_tensor(v)
        if v.data.ndim != 2 or v.data.shape[1] != self.in_dim:
            raise DimensionError(
                f"classifier expects (*, {self.in_dim}) inputs, got {v.data.shape}"
            )
        return nk.softmax_rows(nk.add_bias(nk.matmul(v, self.w), self.b))

    def forward_array(self, v):
        v = np.ascontiguousarray(v, dtype=np.float64)
        return K.softmax_fwd(K.matmul_fwd(v, self.w.data) + self.b.data)

    def parameters(self):
        return [self.w, self.b]


def forward_embed(encoder, projection, batch):
    """Run encoder then projection; returns (v, z) with unit-norm z rows."""
    v = encoder.forward(batch)
    z = projection.forward(v)
    return v, z


def forward_classify(classifier, v):
    return classifier.forward(v)


class MomentumTwin:
    """EMA copy of encoder+projection parameters.

    Initialized as an exact copy; every later change goes through
    :func:`ema_update_params`, never through the optimizer.
    """

    def __init__(self, encoder, projection):
        self._enc_widths = encoder.widths
        self._proj_widths = projection.widths
        self.params = [p.data.copy() for p in (*encoder.parameters(), *projection.parameters())]
        self._n_enc = len(encoder.parameters())

    def forward_embed(self, x):
        """Momentum embedding z' for a plain input array (no gradients)."""
        h = np.ascontiguousarray(x, dtype=np.float64)
        h = self._run(h, self._enc_widths, self.params[: self._n_enc])
        h = self._run(h, self._proj_widths, self.params[self._n_enc:])
        out, _ = K.l2norm_fwd(h)
        return out

    @staticmethod
    def _run(h, widths, params):
        n_layers = len(widths) - 1
        for i in range(n_layers):
            w, b = params[2 * i], params[2 * i + 1]
            h = K.matmul_fwd(h, w) + b
            if i != n_layers - 1:
                h = K.relu_fwd(h)
        return h


def ema_update_params(twin, encoder, projection, m):
    """theta' <- m*theta' + (1-m)*theta for every twin parameter."""
    if not 0.0 <= m < 1.0:
        raise ConfigError(f"momentum coefficient must be in [0, 1), got {m}")
    online = [*encoder.parameters(), *projection.parameters()]
    if len(online) != len(twin.params):
        raise StructuralError(
            f"twin holds {len(twin.params)} parameters, online model {len(online)}"
        )
    for dst, src in zip(twin.params, online):
        if dst.shape != src.data.shape:
            raise StructuralError(
                f"parameter shape mismatch: twin {dst.shape} vs online {src.data.shape}"
            )
        K.ema_update(dst, src.data, m)
