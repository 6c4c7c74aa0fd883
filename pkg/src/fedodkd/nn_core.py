"""Dense MLP engine with hand-written forward/backward passes and plain SGD.

Parameters of a model live in one flat float64 vector. The layout is, for each
layer in order, the weight matrix (``fan_in x fan_out``, row-major) followed by
the bias vector. Hidden layers use ReLU, the output layer is linear.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class NumericalError(ArithmeticError):
    """Raised when an update produces NaN or Inf values."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    num_classes: int
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if not 0.0 < self.scale <= 1.0:
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")

    @property
    def widths(self) -> tuple[int, ...]:
        """Effective hidden widths after channel scaling."""
        return tuple(max(1, int(round(self.scale * w))) for w in self.hidden_widths)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.widths, self.num_classes)
        return list(zip(dims[:-1], dims[1:]))

    def scaled(self, scale: float) -> "ModelSpec":
        return replace(self, scale=scale)


def param_count(spec: ModelSpec) -> int:
    return sum(i * o + o for i, o in spec.layer_shapes)


def unpack(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``(W, b)`` views, one pair per layer."""
    if params.ndim != 1 or params.shape[0] != param_count(spec):
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({param_count(spec)},)"
        )
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """He-style uniform init: ``W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(spec), dtype=np.float64)
    for w, _ in unpack(spec, params):
        bound = np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ValueError(f"batch has shape {batch.shape}, expected (k, {spec.input_dim})")
    return batch


def forward_cached(spec: ModelSpec, params: np.ndarray, batch: np.ndarray):
    """Forward pass returning the logits and the per-layer inputs needed by backprop."""
    h = _check_batch(spec, batch)
    layers = unpack(spec, params)
    inputs = []
    for k, (w, b) in enumerate(layers):
        inputs.append(h)
        z = h @ w + b
        h = np.maximum(z, 0.0) if k < len(layers) - 1 else z
    return h, inputs


def forward(spec: ModelSpec, params: np.ndarray, batch: np.ndarray) -> np.ndarray:
    return forward_cached(spec, params, batch)[0]


def backward_cached(spec: ModelSpec, params: np.ndarray, inputs, dlogits: np.ndarray) -> np.ndarray:
    layers = unpack(spec, params)
    grads = np.empty_like(params)
    grad_layers = unpack(spec, grads)
    delta = dlogits
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        gw, gb = grad_layers[k]
        h = inputs[k]
        gw[...] = h.T @ delta
        gb[...] = delta.sum(axis=0)
        if k > 0:
            # inputs[k] is the post-ReLU activation of layer k-1
            delta = (delta @ w.T) * (h > 0.0)
    return grads


def backward(
    spec: ModelSpec, params: np.ndarray, batch: np.ndarray, dloss_dlogits: np.ndarray
) -> np.ndarray:
    """Gradient of ``sum(dloss_dlogits * forward(batch))`` with respect to the parameters."""
    logits, inputs = forward_cached(spec, params, batch)
    dloss_dlogits = np.asarray(dloss_dlogits, dtype=np.float64)
    if dloss_dlogits.shape != logits.shape:
        raise ValueError(
            f"logit gradient has shape {dloss_dlogits.shape}, expected {logits.shape}"
        )
    return backward_cached(spec, params, inputs, dloss_dlogits)


def sgd_step(params: np.ndarray, grads: np.ndarray, lr: float, weight_decay: float = 0.0) -> np.ndarray:
    """Return ``p - lr * (g + weight_decay * p)``; the input is not modified."""
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in shape")
    out = params - lr * (grads + weight_decay * params)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite parameters after SGD step")
    return out


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant learning rate, e.g. ``0.2`` then ``0.02`` from epoch 200."""

    base_lr: float
    milestones: tuple[tuple[int, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(
            self, "milestones", tuple((int(e), float(lr)) for e, lr in self.milestones)
        )
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        epochs = [e for e, _ in self.milestones]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("milestone epochs must be strictly increasing")
        if epochs and epochs[0] <= 0:
            raise ValueError("milestone epochs must be positive")

    def lr_at(self, epoch: int) -> float:
        lr = self.base_lr
        for start, value in self.milestones:
            if epoch >= start:
                lr = value
        return lr


def accuracy(logits: np.ndarray, labels: Sequence[int]) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits, axis=1) == labels))
