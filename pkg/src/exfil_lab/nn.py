"""Dense feed-forward networks with hand-written backprop.

Parameters are float64 numpy arrays. A weight has shape ``[out, in]`` and a
batch flows as ``x @ W.T + b``. Optimizers must update parameters in place so
that transposed views (see :func:`transpose_network`) stay shared.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError, UnsupportedLayerError
from .rng import make_rng

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSSES = ("softmax_cross_entropy", "mean_squared_error")


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"
    layer_index: int = 1

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer {self.layer_index}: weight {self.weight.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


class Network:
    """Ordered stack of :class:`DenseLayer` with indices 1..L."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers: List[DenseLayer] = list(layers)
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, DenseLayer):
                raise UnsupportedLayerError(f"layer {i + 1} is {type(layer).__name__}, only dense layers are supported")
            layer.layer_index = i + 1
            if i and layer.in_dim != self.layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i + 1} expects {layer.in_dim} inputs but layer {i} produces {self.layers[i - 1].out_dim}"
                )

    @property
    def num_layers(self):
        return len(self.layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim if self.layers else 0

    @property
    def output_dim(self):
        return self.layers[-1].out_dim if self.layers else 0

    @property
    def widths(self):
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self):
        """Flat list ``[W1, b1, W2, b2, ...]`` (weight before bias, layer order)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        return Network(
            [DenseLayer(l.weight.copy(), l.bias.copy(), l.activation, l.layer_index) for l in self.layers]
        )

    def __call__(self, batch):
        return forward(self, batch)

    def __repr__(self):
        acts = ",".join(l.activation for l in self.layers)
        return f"Network(widths={self.widths}, activations=[{acts}])"


def init_network(widths, seed=0, hidden_activation="relu", output_activation="identity"):
    """He-initialised MLP, e.g. ``widths=[256, 128, 64, 8]``."""
    if len(widths) < 2:
        raise ArgumentError("need at least input and output width")
    rng = make_rng(seed, 0x1417)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        layers.append(DenseLayer(w, np.zeros(n_out), output_activation if last else hidden_activation))
    return Network(layers)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _check_batch(net, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise ShapeError(f"batch shape {batch.shape} does not match input_dim {net.input_dim}")
    return batch


def _run(net, batch):
    """Forward pass keeping pre-activations and activations for backprop."""
    pre, post = [], [batch]
    a = batch
    for layer in net.layers:
        with np.errstate(over="ignore", invalid="ignore"):  # reported below, per layer
            z = a @ layer.weight.T + layer.bias
            a = _activate(z, layer.activation)
        if not np.isfinite(a).all():
            raise NumericError(f"non-finite activation in layer {layer.layer_index}")
        pre.append(z)
        post.append(a)
    return pre, post


def forward(net: Network, batch) -> np.ndarray:
    batch = _check_batch(net, batch)
    return _run(net, batch)[1][-1]


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _loss_and_delta(out, targets, loss):
    """Loss value and dL/d(output) for a batch."""
    b = out.shape[0]
    if loss == "softmax_cross_entropy":
        logp = log_softmax(out)
        if targets.ndim == 1:
            labels = targets.astype(np.int64)
            if labels.min() < 0 or labels.max() >= out.shape[1]:
                raise ShapeError(f"labels outside [0, {out.shape[1]})")
            onehot = np.zeros_like(out)
            onehot[np.arange(b), labels] = 1.0
        else:
            onehot = targets
        value = -(onehot * logp).sum() / b
        delta = (np.exp(logp) - onehot) / b
        return float(value), delta
    if loss == "mean_squared_error":
        diff = out - targets
        return float((diff * diff).mean()), 2.0 * diff / diff.size
    raise ArgumentError(f"unknown loss {loss!r}")


def backward(net: Network, batch, targets, loss="softmax_cross_entropy"):
    """Loss and gradients. Returns ``(loss_value, [(dW, db), ...])`` in layer order."""
    batch = _check_batch(net, batch)
    if batch.shape[0] == 0:
        raise ArgumentError("empty batch")
    targets = np.asarray(targets)
    if loss == "mean_squared_error" or targets.ndim == 2:
        targets = targets.astype(np.float64).reshape(batch.shape[0], -1)
        if targets.shape[1] != net.output_dim:
            raise ShapeError(f"targets shape {targets.shape} does not match output_dim {net.output_dim}")
    elif targets.shape != (batch.shape[0],):
        raise ShapeError(f"expected {batch.shape[0]} labels, got shape {targets.shape}")
    pre, post = _run(net, batch)
    value, delta = _loss_and_delta(post[-1], targets, loss)
    grads = [None] * net.num_layers
    for i in range(net.num_layers - 1, -1, -1):
        layer = net.layers[i]
        dz = delta * _activation_grad(pre[i], post[i + 1], layer.activation)
        grads[i] = (dz.T @ post[i], dz.sum(axis=0))
        if i:
            delta = dz @ layer.weight
    return value, grads


def loss_value(net, batch, targets, loss="softmax_cross_entropy"):
    batch = _check_batch(net, batch)
    targets = np.asarray(targets)
    if loss == "mean_squared_error" or targets.ndim == 2:
        targets = targets.astype(np.float64).reshape(batch.shape[0], -1)
    return _loss_and_delta(_run(net, batch)[1][-1], targets, loss)[0]


def near_relu_kink(net, batch, margin=1e-4):
    """True when some relu pre-activation lies within ``margin`` of zero."""
    batch = _check_batch(net, batch)
    pre, _ = _run(net, batch)
    return any(
        layer.activation == "relu" and np.any(np.abs(z) <= margin) for layer, z in zip(net.layers, pre)
    )


def grad_check(net, batch, targets, loss="softmax_cross_entropy", eps=1e-5):
    """Worst relative error between :func:`backward` and central differences.

    The denominator is ``max(|analytic|, |numeric|, 1e-12)``. Relu pre-activations
    sitting within ``eps`` of the kink make the comparison meaningless; such
    cases emit a ``RuntimeWarning`` rather than failing.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    _, grads = backward(net, batch, targets, loss)
    margin = 10.0 * eps * (1.0 + float(np.abs(np.asarray(batch, dtype=np.float64)).max(initial=0.0)))
    if near_relu_kink(net, batch, margin):
        warnings.warn("relu pre-activation near 0; finite differences unreliable", RuntimeWarning, stacklevel=2)
    worst = 0.0
    flat_grads = [g for pair in grads for g in pair]
    for param, analytic in zip(net.parameters(), flat_grads):
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            param[idx] = orig + eps
            up = loss_value(net, batch, targets, loss)
            param[idx] = orig - eps
            down = loss_value(net, batch, targets, loss)
            param[idx] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


def transpose_network(net: Network, reverse_biases=None, reverse_activations=None) -> Network:
    """Reverse-direction network sharing weight storage with ``net``.

    Layer k of the result wraps a transposed *view* of layer ``L+1-k``'s weight,
    so in-place updates through either network are seen by both. Biases and
    activations of the reverse direction are independent.
    """
    for layer in net.layers:
        if not isinstance(layer, DenseLayer):
            raise UnsupportedLayerError(f"{type(layer).__name__} is not transposable")
    rev = net.layers[::-1]
    if reverse_biases is None:
        reverse_biases = [np.zeros(l.in_dim) for l in rev]
    if reverse_activations is None:
        reverse_activations = ["relu"] * (len(rev) - 1) + ["sigmoid"]
    if len(reverse_biases) != len(rev) or len(reverse_activations) != len(rev):
        raise ShapeError("need one reverse bias and activation per layer")
    layers = []
    for layer, b, act in zip(rev, reverse_biases, reverse_activations):
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (layer.in_dim,):
            raise ShapeError(f"reverse bias for layer {layer.layer_index} must have shape ({layer.in_dim},)")
        layers.append(DenseLayer(layer.weight.T, b, act))
    return Network(layers)


def predict(net, batch, batch_size: Optional[int] = 1024):
    batch = _check_batch(net, batch)
    if batch_size is None or batch.shape[0] <= batch_size:
        return forward(net, batch)
    return np.concatenate([forward(net, batch[i : i + batch_size]) for i in range(0, batch.shape[0], batch_size)])
