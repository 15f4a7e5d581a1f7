"""Parameter containers with hand-derived backprop, Adam, and a flat
binary checkpoint format.

Three containers cover the training engines: a free embedding table, a
one-hidden-layer (or linear) encoder, and a linear-softmax cluster head.
Everything is float64; initialization is seeded and uses
uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for weights, zeros
for biases, and gaussian(0, 1e-2) for free embedding tables.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DimensionError, NumericalError, ParseError

CHECKPOINT_MAGIC = b"BICN1"

_KIND_TAGS = {"free": 0, "linear": 1, "mlp1": 2, "head": 3}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def glorot_uniform(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class FreeEmbedding:
    """One trainable row per data point; no inputs, the table is the output."""

    kind = "free"

    def __init__(self, table):
        table = np.ascontiguousarray(table, dtype=float)
        if table.ndim != 2:
            raise DimensionError(f"embedding table must be 2-D, got shape {table.shape}")
        self.table = table

    @classmethod
    def init(cls, n, out_dim, rng, scale=1e-2):
        return cls(scale * rng.standard_normal((n, out_dim)))

    def params(self):
        return {"embedding": self.table}


class Encoder:
    """linear: x W1 + b1. mlp1: tanh(x W1 + b1) W2 + b2."""

    def __init__(self, kind, W1, b1, W2=None, b2=None):
        if kind not in ("linear", "mlp1"):
            raise DimensionError(f"unknown encoder kind {kind!r}")
        self.kind = kind
        self.W1 = np.ascontiguousarray(W1, dtype=float)
        self.b1 = np.ascontiguousarray(b1, dtype=float)
        if kind == "mlp1":
            if W2 is None or b2 is None:
                raise DimensionError("mlp1 encoder needs W2 and b2")
            self.W2 = np.ascontiguousarray(W2, dtype=float)
            self.b2 = np.ascontiguousarray(b2, dtype=float)
        else:
            self.W2 = None
            self.b2 = None

    @classmethod
    def init(cls, kind, in_dim, hidden, out_dim, rng):
        if kind not in ("linear", "mlp1"):
            raise DimensionError(f"unknown encoder kind {kind!r}")
        if kind == "linear":
            return cls("linear", glorot_uniform(rng, in_dim, out_dim), np.zeros(out_dim))
        return cls(
            "mlp1",
            glorot_uniform(rng, in_dim, hidden),
            np.zeros(hidden),
            glorot_uniform(rng, hidden, out_dim),
            np.zeros(out_dim),
        )

    def params(self):
        if self.kind == "linear":
            return {"W1": self.W1, "b1": self.b1}
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def forward(encoder, x):
    """Encoder output for a batch of rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != encoder.W1.shape[0]:
        raise DimensionError(f"input shape {x.shape} does not match W1 {encoder.W1.shape}")
    a = x @ encoder.W1 + encoder.b1
    if encoder.kind == "linear":
        return a
    return np.tanh(a) @ encoder.W2 + encoder.b2


def backward(encoder, x, dL_dout):
    """Parameter gradients and dL/dx for a batch; recomputes the forward pass."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(dL_dout, dtype=float)
    if g.ndim != 2 or g.shape[0] != x.shape[0]:
        raise DimensionError(f"gradient shape {g.shape} does not match input {x.shape}")
    if encoder.kind == "linear":
        return {"W1": x.T @ g, "b1": g.sum(axis=0)}, g @ encoder.W1.T
    h = np.tanh(x @ encoder.W1 + encoder.b1)
    dh = g @ encoder.W2.T
    da = dh * (1.0 - h * h)  # tanh' = 1 - tanh^2
    grads = {
        "W1": x.T @ da,
        "b1": da.sum(axis=0),
        "W2": h.T @ g,
        "b2": g.sum(axis=0),
    }
    return grads, da @ encoder.W1.T


class ClusterHead:
    """Linear layer followed by a row softmax over cluster logits."""

    kind = "head"

    def __init__(self, W, b):
        self.W = np.ascontiguousarray(W, dtype=float)
        self.b = np.ascontiguousarray(b, dtype=float)

    @classmethod
    def init(cls, in_dim, clusters, rng):
        return cls(glorot_uniform(rng, in_dim, clusters), np.zeros(clusters))

    def params(self):
        return {"W": self.W, "b": self.b}


def head_forward(head, x):
    """Soft assignment rows; each row sums to 1 for arbitrary finite input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != head.W.shape[0]:
        raise DimensionError(f"input shape {x.shape} does not match W {head.W.shape}")
    logits = x @ head.W + head.b
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def head_backward(head, x, dL_dprobs):
    """Parameter gradients and dL/dx through the softmax head."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(dL_dprobs, dtype=float)
    probs = head_forward(head, x)
    if g.shape != probs.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match assignments {probs.shape}")
    dlogits = probs * (g - np.sum(g * probs, axis=1, keepdims=True))
    return {"W": x.T @ dlogits, "b": dlogits.sum(axis=0)}, dlogits @ head.W.T


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    def step(self, grads):
        for name in self.params:
            if name not in grads:
                raise DimensionError(f"missing gradient for parameter {name!r}")
            if not np.all(np.isfinite(grads[name])):
                raise NumericalError(f"non-finite gradient entries in {name!r}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _model_from_tensors(kind, tensors):
    if kind == "free":
        (table,) = tensors
        return FreeEmbedding(table)
    if kind == "linear":
        W1, b1 = tensors
        return Encoder("linear", W1, b1)
    if kind == "mlp1":
        W1, b1, W2, b2 = tensors
        return Encoder("mlp1", W1, b1, W2, b2)
    W, b = tensors
    return ClusterHead(W, b)


_EXPECTED_TENSORS = {"free": 1, "linear": 2, "mlp1": 4, "head": 2}


def save_checkpoint(path, model):
    """Flat binary checkpoint: magic, kind tag and shapes as little-endian
    int64, then all parameter tensors as row-major little-endian float64."""
    tensors = list(model.params().values())
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<q", _KIND_TAGS[model.kind]))
        f.write(struct.pack("<q", len(tensors)))
        for a in tensors:
            f.write(struct.pack("<q", a.ndim))
            f.write(struct.pack(f"<{a.ndim}q", *a.shape))
        for a in tensors:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)

    def read_ints(count):
        nonlocal offset
        end = offset + 8 * count
        if end > len(blob):
            raise ParseError(f"{path}: truncated checkpoint header")
        vals = struct.unpack(f"<{count}q", blob[offset:end])
        offset = end
        return vals

    (tag,) = read_ints(1)
    if tag not in _TAG_KINDS:
        raise ParseError(f"{path}: unknown model kind tag {tag}")
    kind = _TAG_KINDS[tag]
    (count,) = read_ints(1)
    if count != _EXPECTED_TENSORS[kind]:
        raise ParseError(f"{path}: expected {_EXPECTED_TENSORS[kind]} tensors for {kind!r}, header says {count}")
    shapes = []
    for _ in range(count):
        (ndim,) = read_ints(1)
        if not (0 <= ndim <= 8):
            raise ParseError(f"{path}: implausible tensor rank {ndim}")
        shapes.append(read_ints(ndim))
    tensors = []
    for shape in shapes:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * size
        if end > len(blob):
            raise ParseError(f"{path}: truncated checkpoint payload")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").astype(float).reshape(shape)
        tensors.append(arr)
        offset = end
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes after payload")
    return _model_from_tensors(kind, tensors)
