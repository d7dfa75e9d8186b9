"""Feedforward ReLU classifier with exact input and parameter gradients.

Inputs are float64 arrays of shape ``(d,)`` for a single example or ``(n, d)``
for a batch. Every gradient is computed by a hand-written reverse pass; there is
no general autodiff graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .errors import CheckpointError, DomainError, ShapeError

ACTIVATIONS = ("relu", "linear")

CHECKPOINT_MAGIC = b"QGMLPCK\n"
CHECKPOINT_VERSION = 1
_ACT_CODES = {"linear": 0, "relu": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

ParamGrads = List[Tuple[np.ndarray, np.ndarray]]


@dataclass
class Layer:
    """Affine map ``W @ a + b`` followed by an activation."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ShapeError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Model:
    """Multilayer perceptron ``f: R^d -> R^L``.

    Hidden layers use ReLU; the last layer is linear and feeds softmax
    cross-entropy.
    """

    layers: List[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a model needs at least one layer")
        for k, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer {k} outputs {a.out_dim} features but layer {k + 1} expects {b.in_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> ParamGrads:
        return [(layer.weight, layer.bias) for layer in self.layers]

    def copy(self) -> "Model":
        return Model([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def num_parameters(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of an MLP: input width, hidden widths, number of classes."""

    input_dim: int
    hidden: Tuple[int, ...] = (64,)
    num_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.num_classes < 2 or any(h < 1 for h in self.hidden):
            raise DomainError(f"invalid model spec {self}")


def init_model(spec: ModelSpec, seed: Union[int, np.random.Generator] = 0) -> Model:
    """He-normal weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    widths = [spec.input_dim, *spec.hidden, spec.num_classes]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        act = "linear" if k == len(widths) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Model(layers)


def _as_batch(model: Model, x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(
            f"expected input of width {model.input_dim}, got shape {np.shape(x)}"
        )
    return x, single


def _check_labels(model: Model, y, n: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise DomainError("labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise DomainError(f"labels must lie in [0, {model.num_classes})")
    return y


def _forward_cached(model: Model, x: np.ndarray):
    pre, post = [], [x]
    a = x
    for layer in model.layers:
        z = a @ layer.weight.T + layer.bias
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        pre.append(z)
        post.append(a)
    return pre, post


def forward(model: Model, x) -> np.ndarray:
    """Logits for ``x``; shape ``(L,)`` for one example, ``(n, L)`` for a batch."""
    xb, single = _as_batch(model, x)
    _, post = _forward_cached(model, xb)
    return post[-1][0] if single else post[-1]


def predict(model: Model, x) -> np.ndarray:
    """Predicted labels ``argmax_k f_k(x)``."""
    return np.argmax(forward(model, x), axis=-1)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return shifted / np.sum(shifted, axis=-1, keepdims=True)


def loss(model: Model, x, y):
    """Cross-entropy ``-log softmax(f(x))_y``.

    Returns a float for a single example and a per-example array for a batch.
    """
    xb, single = _as_batch(model, x)
    yb = _check_labels(model, y, xb.shape[0])
    logp = log_softmax(forward(model, xb))
    per_example = -logp[np.arange(xb.shape[0]), yb]
    # -log p can round to -0.0 or a hair below zero when p == 1
    per_example = np.maximum(per_example, 0.0)
    return float(per_example[0]) if single else per_example


def _backward(model: Model, pre, post, dlogits: np.ndarray, want_params: bool):
    """Propagate ``dlogits`` (n, L) back through the net.

    Returns the gradient w.r.t. the input and, if requested, per-layer
    ``(dW, db)`` summed over the batch.
    """
    grads = []
    delta = dlogits
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if layer.activation == "relu":
            # subgradient at exactly 0 is 0
            delta = delta * (pre[k] > 0.0)
        if want_params:
            grads.append((delta.T @ post[k], delta.sum(axis=0)))
        delta = delta @ layer.weight
    grads.reverse()
    return delta, grads


def input_gradient(model: Model, x, y) -> np.ndarray:
    """Gradient of each example's own loss w.r.t. its input, same shape as ``x``."""
    xb, single = _as_batch(model, x)
    yb = _check_labels(model, y, xb.shape[0])
    pre, post = _forward_cached(model, xb)
    dlogits = softmax(post[-1])
    dlogits[np.arange(xb.shape[0]), yb] -= 1.0
    dx, _ = _backward(model, pre, post, dlogits, want_params=False)
    return dx[0] if single else dx


def loss_and_param_gradient(model: Model, x, y) -> Tuple[float, ParamGrads]:
    """Mean batch loss and its gradient w.r.t. every weight and bias."""
    xb, _ = _as_batch(model, x)
    if xb.shape[0] == 0:
        raise DomainError("param_gradient needs a nonempty batch")
    yb = _check_labels(model, y, xb.shape[0])
    n = xb.shape[0]
    pre, post = _forward_cached(model, xb)
    logits = post[-1]
    logp = log_softmax(logits)
    mean_loss = float(-np.mean(logp[np.arange(n), yb]))
    dlogits = np.exp(logp)
    dlogits[np.arange(n), yb] -= 1.0
    dlogits /= n
    _, grads = _backward(model, pre, post, dlogits, want_params=True)
    return mean_loss, grads


def param_gradient(model: Model, x, y) -> ParamGrads:
    return loss_and_param_gradient(model, x, y)[1]


# --- checkpoints -----------------------------------------------------------
#
# Layout (all integers little-endian uint32, all reals little-endian float64):
#   magic            8 bytes  b"QGMLPCK\n"
#   version          u32
#   num_layers       u32
#   per layer:
#     out_dim        u32
#     in_dim         u32
#     activation     u32      0 = linear, 1 = relu
#     weight         out_dim * in_dim f64, row-major
#     bias           out_dim f64


def dumps_model(model: Model) -> bytes:
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(model.layers))]
    for layer in model.layers:
        parts.append(struct.pack("<III", layer.out_dim, layer.in_dim, _ACT_CODES[layer.activation]))
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def loads_model(blob: bytes) -> Model:
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(blob):
            raise CheckpointError("checkpoint is truncated")
        chunk = blob[pos : pos + nbytes]
        pos += nbytes
        return chunk

    version, num_layers = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(num_layers):
        out_dim, in_dim, code = struct.unpack("<III", take(12))
        if code not in _ACT_NAMES:
            raise CheckpointError(f"unknown activation code {code}")
        w = np.frombuffer(take(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
        b = np.frombuffer(take(8 * out_dim), dtype="<f8")
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), _ACT_NAMES[code]))
    if pos != len(blob):
        raise CheckpointError("trailing bytes after the last layer")
    try:
        return Model(layers)
    except ShapeError as exc:
        raise CheckpointError(str(exc)) from exc


def save_model(model: Model, path: Union[str, Path]) -> None:
    Path(path).write_bytes(dumps_model(model))


def load_model(path: Union[str, Path]) -> Model:
    return loads_model(Path(path).read_bytes())


def model_from_arrays(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> Model:
    """Build a model with ReLU hidden layers and a linear output layer."""
    n = len(weights)
    return Model(
        [
            Layer(w, b, "linear" if k == n - 1 else "relu")
            for k, (w, b) in enumerate(zip(weights, biases))
        ]
    )
