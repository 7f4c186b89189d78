"""Learning-rate schedules and the AdamW / SGD update rules.

Schedules are pure functions of (step, layer). The optimizers mutate network
parameters in place and take one learning rate per layer; a layer's weight
and bias share that rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError

DECAYS = ("exponential", "linear")
SCHEDULE_KINDS = ("constant", "super_ft", "lwlrd")


def lwlrd_rate(layer_index, num_layers, eta_high, eta_low, decay="exponential"):
    """Learning rate for 1-based ``layer_index`` under layer-wise decay.

    Layer 1 gets ``eta_high`` and layer ``num_layers`` gets ``eta_low``. The
    exponential mode interpolates geometrically, the linear mode arithmetically.
    """
    if not 1 <= layer_index <= num_layers:
        raise ArgumentError(f"layer index {layer_index} outside [1, {num_layers}]")
    if decay not in DECAYS:
        raise ArgumentError(f"unknown decay {decay!r}")
    if num_layers == 1:
        return float(eta_high)
    frac = (layer_index - 1) / (num_layers - 1)
    if decay == "exponential":
        return float(eta_high * (eta_low / eta_high) ** frac)
    return float(eta_high + (eta_low - eta_high) * frac)


def lwlrd_rates(num_layers, eta_high, eta_low, decay="exponential"):
    return [lwlrd_rate(l, num_layers, eta_high, eta_low, decay) for l in range(1, num_layers + 1)]


def superft_rate(step, cycle_len, eta_base, eta_max):
    """Triangular cyclical rate: ``eta_base`` at cycle start, ``eta_max`` mid-cycle."""
    if cycle_len < 2:
        raise ArgumentError("cycle length must be >= 2")
    if step < 0:
        raise ArgumentError("step must be >= 0")
    tri = 1.0 - abs(2.0 * (step % cycle_len) / cycle_len - 1.0)
    return eta_base + tri * (eta_max - eta_base)


@dataclass
class ScheduleSpec:
    kind: str = "constant"
    eta: float = 1e-4
    eta_base: float = 1e-4
    eta_max: float = 1e-1
    eta_max_phase2: float = 1e-3
    cycle_len: int = 10
    phase2_start_frac: float = 0.1
    eta_high: float = 1e-2
    eta_low: float = 1e-4
    decay: str = "exponential"

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ArgumentError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not self.eta > 0:
            raise ArgumentError("eta must be > 0")
        if self.kind == "super_ft":
            if self.cycle_len < 2:
                raise ArgumentError("cycle_len must be >= 2")
            if min(self.eta_base, self.eta_max, self.eta_max_phase2) <= 0:
                raise ArgumentError("super_ft rates must be > 0")
            if not 0.0 <= self.phase2_start_frac <= 1.0:
                raise ArgumentError("phase2_start_frac must lie in [0, 1]")
        if self.kind == "lwlrd":
            if self.eta_high <= 0 or self.eta_low <= 0:
                raise ArgumentError("eta_high and eta_low must be > 0")
            if self.eta_high < self.eta_low:
                raise ArgumentError("eta_high must be >= eta_low")
            if self.decay not in DECAYS:
                raise ArgumentError(f"unknown decay {self.decay!r}")

    def rates(self, step, total_steps, num_layers):
        """Per-layer rates at optimizer step ``step`` of ``total_steps``."""
        if self.kind == "constant":
            return [self.eta] * num_layers
        if self.kind == "lwlrd":
            return lwlrd_rates(num_layers, self.eta_high, self.eta_low, self.decay)
        peak = self.eta_max if step < self.phase2_start_frac * total_steps else self.eta_max_phase2
        return [superft_rate(step, self.cycle_len, self.eta_base, peak)] * num_layers


@dataclass
class OptimizerState:
    """AdamW moments, one ``(weight, bias)`` pair per layer."""

    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_network(cls, net, **kwargs):
        params = net.parameters()
        return cls(
            m=[np.zeros(p.shape) for p in params],
            v=[np.zeros(p.shape) for p in params],
            **kwargs,
        )


def _flat_grads(net, grads):
    flat = [g for pair in grads for g in pair]
    params = net.parameters()
    if len(flat) != len(params):
        raise ShapeError(f"expected gradients for {net.num_layers} layers, got {len(grads)}")
    for p, g in zip(params, flat):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")
    return params, flat


def _check_rates(net, rates, allow_zero=False):
    if len(rates) != net.num_layers:
        raise ArgumentError(f"need {net.num_layers} rates, got {len(rates)}")
    for r in rates:
        if r < 0 or (r == 0 and not allow_zero):
            raise ArgumentError(f"learning rate must be > 0, got {r}")


def adamw_step(net, grads, state: OptimizerState, rates):
    """One in-place AdamW update with decoupled weight decay.

    ``theta -= rate * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``
    """
    _check_rates(net, rates)
    params, flat = _flat_grads(net, grads)
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, (p, g) in enumerate(zip(params, flat)):
        rate = rates[k // 2]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= rate * ((m / c1) / (np.sqrt(v / c2) + state.eps_adam) + state.weight_decay * p)
    return net, state


def sgd_step(net, grads, eta, weight_decay=0.0, rates=None):
    """Plain gradient step ``theta -= eta * (g + weight_decay * theta)``.

    ``rates`` (one per layer) overrides ``eta`` for layer-wise schedules.
    """
    if rates is None:
        if eta < 0:
            raise ArgumentError("eta must be >= 0")
        rates = [eta] * net.num_layers
    else:
        _check_rates(net, rates, allow_zero=True)
    if weight_decay < 0:
        raise ArgumentError("weight decay must be >= 0")
    params, flat = _flat_grads(net, grads)
    for k, (p, g) in enumerate(zip(params, flat)):
        p -= rates[k // 2] * (g + weight_decay * p)
    return net


class StepDecay:
    """Multiply a base rate by ``factor`` after every ``frac`` of total epochs."""

    def __init__(self, base, factor=0.5, frac=0.25):
        if base <= 0 or not 0 < factor <= 1 or not 0 < frac <= 1:
            raise ArgumentError("invalid step decay parameters")
        self.base = base
        self.factor = factor
        self.frac = frac

    def __call__(self, epoch, total_epochs):
        if total_epochs <= 0:
            return self.base
        period = max(1, int(round(self.frac * total_epochs)))
        return self.base * self.factor ** (epoch // period)
