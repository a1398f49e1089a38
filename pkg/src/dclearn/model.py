"""One-hidden-layer perceptron with hand-written backprop.

Shapes: W1 is d x h, W2 is h x c, so a batch X (n x d) maps to logits
act(X W1 + b1) W2 + b2. The output layer (W2, b2) is the tracked layer that
the correction acts on; its flat order is W2 row-major then b2.
"""

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import optim
from .numerics import DimensionError, NumericError

LOSSES = ("softmax_cross_entropy", "mse_onehot")
ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        d, h = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[0] != h or self.b2.shape != (self.W2.shape[1],):
            raise DimensionError("inconsistent layer shapes")
        if h < 1 or self.W2.shape[1] < 2:
            raise DimensionError("need h >= 1 and c >= 2")

    @property
    def dims(self):
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    @property
    def tracked_size(self):
        h, c = self.W2.shape
        return h * c + c

    def copy(self):
        return Mlp(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(), self.activation)


class Grads(NamedTuple):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise DimensionError(f"batch inputs {X.shape} and labels {y.shape} do not match")
        if not np.all(np.isfinite(X)):
            raise NumericError("batch inputs are not finite")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y.astype(np.int64))


def init_mlp(d, h, c, activation="relu", rng=None):
    """Glorot-uniform weights, zero biases."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    a1 = np.sqrt(6.0 / (d + h))
    a2 = np.sqrt(6.0 / (h + c))
    W1 = rng.uniform(-a1, a1, size=(d, h))
    W2 = rng.uniform(-a2, a2, size=(h, c))
    return Mlp(W1, np.zeros(h), W2, np.zeros(c), activation)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _hidden(m, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != m.W1.shape[0]:
        raise DimensionError(f"input length {X.shape[-1]} != {m.W1.shape[0]}")
    z = X @ m.W1 + m.b1
    return z, _act(z, m.activation)


def forward(m, x):
    """Logits for a single row (returns a vector) or a batch (returns n x c)."""
    _, a = _hidden(m, x)
    return a @ m.W2 + m.b2


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(m, batch, loss="softmax_cross_entropy"):
    """Mean loss over the batch and its gradient for every parameter."""
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    X, y = batch.inputs, batch.labels
    n = X.shape[0]
    c = m.W2.shape[1]
    if y.min() < 0 or y.max() >= c:
        raise DimensionError("label outside [0, c)")
    with np.errstate(over="ignore", invalid="ignore"):
        z1, a1 = _hidden(m, X)
        z2 = a1 @ m.W2 + m.b2
    if not np.all(np.isfinite(z2)):
        raise NumericError("non-finite logits")
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    if loss == "softmax_cross_entropy":
        logp = _log_softmax(z2)
        value = -float(logp[np.arange(n), y].mean())
        dz2 = (np.exp(logp) - onehot) / n
    else:
        diff = z2 - onehot
        value = 0.5 * float((diff * diff).sum()) / n
        dz2 = diff / n
    dW2 = a1.T @ dz2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ m.W2.T) * _act_grad(z1, a1, m.activation)
    dW1 = X.T @ dz1
    db1 = dz1.sum(axis=0)
    return value, Grads(dW1, db1, dW2, db2)


def tracked_gradient(grads):
    return np.concatenate([grads.W2.ravel(), grads.b2])


def unflatten_tracked(vec, h, c):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (h * c + c,):
        raise DimensionError(f"tracked vector of length {vec.shape} for h={h}, c={c}")
    return vec[: h * c].reshape(h, c).copy(), vec[h * c :].copy()


def tracked_weights(m):
    return np.concatenate([m.W2.ravel(), m.b2])


def flatten_params(m):
    # tracked block last, so it is the tail of the flat vector
    return np.concatenate([m.W1.ravel(), m.b1, m.W2.ravel(), m.b2])


def unflatten_params(vec, like):
    d, h, c = like.dims
    i = d * h
    W1 = vec[:i].reshape(d, h)
    b1 = vec[i : i + h]
    W2, b2 = unflatten_tracked(vec[i + h :], h, c)
    return Mlp(W1.copy(), b1.copy(), W2, b2, like.activation)


def apply_update(m, raw_grads, tracked_corrected, opt_state, cfg):
    """One optimizer step: hidden layer with raw gradients, tracked layer
    with ``tracked_corrected``. Both share the same optimizer state."""
    tracked_corrected = np.asarray(tracked_corrected, dtype=np.float64)
    if tracked_corrected.shape != (m.tracked_size,):
        raise DimensionError(f"corrected gradient of length {tracked_corrected.shape} != {m.tracked_size}")
    g = np.concatenate([raw_grads.W1.ravel(), raw_grads.b1, tracked_corrected])
    w = optim.step(flatten_params(m), g, opt_state, cfg)
    if not np.all(np.isfinite(w)):
        raise NumericError("parameters became non-finite")
    return unflatten_params(w, m)


def predict(m, X):
    return np.argmax(forward(m, np.atleast_2d(X)), axis=1)


def accuracy(m, X, y):
    return float(np.mean(predict(m, X) == np.asarray(y)))


def save_checkpoint(path, m):
    """Write a checkpoint: one JSON header line, then raw float64 data.

    The header names each array and its shape in storage order (W1, b1, W2,
    b2); the payload is the arrays' little-endian bytes, row-major, back to
    back. The output depends only on the parameters, so it is reproducible.
    """
    arrays = [("W1", m.W1), ("b1", m.b1), ("W2", m.W2), ("b2", m.b2)]
    header = {"format": "dclearn-mlp", "version": CHECKPOINT_VERSION, "activation": m.activation,
              "arrays": [[name, list(a.shape)] for name, a in arrays]}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != "dclearn-mlp":
            raise ValueError("not a model checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        out = {}
        for name, shape in header["arrays"]:
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError("checkpoint is truncated")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return Mlp(out["W1"], out["b1"], out["W2"], out["b2"], header["activation"])
