"""Minimal feed-forward classifier with exact analytic gradients.

The model is a plain MLP: rectifier hidden layers, softmax + cross-entropy
at the output. Parameters live in a single flat float64 vector so they can
be shipped between simulated clients and the server as one unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ModelSpec:
    """Layer sizes of the MLP, input first, class count last."""

    layer_dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("ModelSpec needs at least input and output dims")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive, got {self.layer_dims}")
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_params(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass(frozen=True)
class Batch:
    """Features in [0, 1], integer class labels."""

    features: np.ndarray  # (n, d)
    labels: np.ndarray    # (n,)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"row mismatch: {len(self.features)} features vs "
                f"{len(self.labels)} labels"
            )
        if len(self.features) < 1:
            raise ValueError("batch must be nonempty")

    def __len__(self) -> int:
        return len(self.features)


def init_model(spec: ModelSpec, seed: int) -> np.ndarray:
    """Deterministic fan-based uniform init; biases zero.

    Each weight matrix is drawn from uniform(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)).
    """
    rng = np.random.default_rng(seed)
    parts = []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-a, a, size=fan_in * fan_out))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def unpack_params(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split the flat vector into per-layer (W, b) views."""
    if params.shape != (spec.num_params,):
        raise ValueError(
            f"param vector length {params.shape} does not match spec "
            f"({spec.num_params},)"
        )
    layers = []
    pos = 0
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def _forward_pass(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Returns (probabilities, list of post-activation values per layer)."""
    layers = unpack_params(spec, params)
    activations = [x]
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
        else:
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            h = e / e.sum(axis=1, keepdims=True)
        activations.append(h)
    return h, activations


def forward(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Class probabilities, one row per sample; rows sum to 1."""
    probs, _ = _forward_pass(spec, params, batch.features)
    return probs


def loss_and_grad(spec: ModelSpec, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact gradient."""
    if not np.all(np.isfinite(params)):
        raise ValueError("non-finite entries in parameter vector")
    layers = unpack_params(spec, params)
    probs, acts = _forward_pass(spec, params, batch.features)
    n = len(batch)
    labels = np.asarray(batch.labels, dtype=np.intp)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(picked)))

    # Backprop. delta starts as d(loss)/d(logits) of the softmax layer.
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        h_in = acts[i]
        grads.append(delta.sum(axis=0))        # bias
        grads.append((h_in.T @ delta).ravel())  # weights, row-major
        if i > 0:
            delta = delta @ w.T
            delta[acts[i] <= 0.0] = 0.0  # rectifier mask
    grads.reverse()
    return loss, np.concatenate(grads)


def sgd_step(params: np.ndarray, grad: np.ndarray, lr: float, decay: float = 0.0) -> np.ndarray:
    """One step of SGD with weight decay: p - lr * (g + decay * p)."""
    if params.shape != grad.shape:
        raise ValueError(f"shape mismatch: {params.shape} vs {grad.shape}")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if decay < 0:
        raise ValueError("decay must be nonnegative")
    return params - lr * (grad + decay * params)


def evaluate(spec: ModelSpec, params: np.ndarray, data: Batch) -> tuple[float, float]:
    """Mean cross-entropy loss and top-1 accuracy on `data`.

    Argmax ties break toward the lowest class index.
    """
    probs, _ = _forward_pass(spec, params, data.features)
    labels = np.asarray(data.labels, dtype=np.intp)
    picked = probs[np.arange(len(data)), labels]
    loss = float(-np.mean(np.log(picked)))
    acc = float(np.mean(probs.argmax(axis=1) == labels))
    return loss, acc
