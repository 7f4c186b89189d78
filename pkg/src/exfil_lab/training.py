"""Minibatch training loop shared by the harness, the attacks and the sanitizers."""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError, NumericError
from .metrics import EvalResult, evaluate_logits
from .nn import backward, init_network, predict
from .optim import OptimizerState, adamw_step
from .rng import make_rng

# small batches give the fine-tuning sanitizers enough steps to act at toy scale
DEFAULT_BATCH_SIZE = 2


def minibatches(n, batch_size, rng):
    """Shuffled index batches covering ``range(n)`` once."""
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_classifier(net, ds, epochs, lr=1e-4, batch_size=DEFAULT_BATCH_SIZE, seed=0, weight_decay=0.0, callback=None):
    """AdamW at a constant rate on softmax cross-entropy. Returns per-epoch mean losses."""
    if len(ds) == 0:
        raise ArgumentError("empty training set")
    x, y = ds.flat(), ds.labels
    rng = make_rng(seed, 0x7A1)
    state = OptimizerState.for_network(net, weight_decay=weight_decay)
    rates = [lr] * net.num_layers
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for idx in minibatches(len(ds), batch_size, rng):
            value, grads = backward(net, x[idx], y[idx])
            if not np.isfinite(value):
                raise NumericError(f"loss diverged at epoch {epoch}")
            adamw_step(net, grads, state, rates)
            total += value * idx.size
        losses.append(total / len(ds))
        if callback is not None:
            callback(epoch + 1, net)
    return losses


def evaluate(net, ds) -> EvalResult:
    return evaluate_logits(predict(net, ds.flat()), ds.labels)


def fresh_classifier(ds, hidden=(128, 64), seed=0):
    h, w = ds.shape
    return init_network([h * w, *hidden, ds.num_classes], seed=seed)
