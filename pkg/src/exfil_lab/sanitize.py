"""Export-time mitigations: weight perturbations followed by utility fine-tuning."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ArgumentError, NumericError
from .nn import Network, backward
from .optim import OptimizerState, ScheduleSpec, adamw_step, sgd_step
from .rng import gaussian, make_rng
from .training import DEFAULT_BATCH_SIZE, evaluate, minibatches

METHODS = (
    "vanilla_ft",
    "high_lr_ft",
    "super_ft",
    "wd_ft",
    "rwp_ft",
    "fine_prune_ft",
    "rwd_ft",
    "lwlrd_ft",
)

ETA_TRAINING = 1e-4
ETA_HIGH_LR = 1e-2
WD_LAMBDA = 1e-2


def default_schedule(kind):
    if kind == "high_lr_ft":
        return ScheduleSpec("constant", eta=ETA_HIGH_LR)
    if kind == "super_ft":
        return ScheduleSpec("super_ft")
    if kind == "lwlrd_ft":
        return ScheduleSpec("lwlrd")
    return ScheduleSpec("constant", eta=ETA_TRAINING)


@dataclass
class MitigationMethod:
    kind: str = "lwlrd_ft"
    epochs: int = 3
    schedule: Optional[ScheduleSpec] = None
    sigma: float = 1e-2
    drop_prob: float = 0.1
    prune_acc_budget: float = 0.04
    weight_decay: Optional[float] = None
    optimizer: str = "adamw"
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ArgumentError(f"unknown mitigation {self.kind!r}; choose from {', '.join(METHODS)}")
        if self.epochs < 0:
            raise ArgumentError("epochs must be >= 0")
        if self.sigma < 0:
            raise ArgumentError("sigma must be >= 0")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ArgumentError("drop_prob must lie in [0, 1]")
        if not 0.0 <= self.prune_acc_budget <= 1.0:
            raise ArgumentError("prune_acc_budget must lie in [0, 1]")
        if self.optimizer not in ("adamw", "sgd"):
            raise ArgumentError("optimizer must be 'adamw' or 'sgd'")
        if self.schedule is None:
            self.schedule = default_schedule(self.kind)
        if self.weight_decay is None:
            self.weight_decay = WD_LAMBDA if self.kind == "wd_ft" else 0.0

    def to_dict(self):
        return asdict(self)


@dataclass
class PruneMask:
    """``mask[i]`` is False where parameter i is pinned to zero."""

    name: str
    mask: np.ndarray
    threshold: float = float("nan")

    @property
    def zeroed_fraction(self):
        return float(1.0 - self.mask.mean()) if self.mask.size else 0.0


@dataclass
class MitigationReport:
    method: str
    optimizer: str
    epochs: int
    steps: int
    wall_time_s: float
    loss_curve: List[float] = field(default_factory=list)
    rates: List[float] = field(default_factory=list)
    masks: Dict[str, float] = field(default_factory=dict)
    prune_threshold: Optional[float] = None

    def to_dict(self):
        return asdict(self)


def _param_names(net):
    names = []
    for layer in net.layers:
        names += [f"layer{layer.layer_index}.weight", f"layer{layer.layer_index}.bias"]
    return names


def rwp(net: Network, sigma, seed) -> Network:
    """Copy of ``net`` with i.i.d. N(0, sigma^2) noise on every parameter."""
    if sigma < 0:
        raise ArgumentError("sigma must be >= 0")
    out = net.copy()
    if sigma == 0:
        return out
    rng = make_rng(seed, 0x3A9)
    for p in out.parameters():
        p += gaussian(rng, p.size, sigma).reshape(p.shape)
    return out


def fine_prune(net: Network, eval_data, budget=0.04):
    """Magnitude-prune the penultimate layer's weights under an accuracy budget.

    Binary-searches the largest threshold whose mask keeps accuracy on
    ``eval_data`` at or above ``baseline - budget``.
    """
    if not 0.0 <= budget <= 1.0:
        raise ArgumentError("budget must lie in [0, 1]")
    if len(eval_data) == 0:
        raise ArgumentError("eval_data is empty")
    if net.num_layers < 2:
        raise ArgumentError("fine-pruning needs at least two layers")
    layer = net.layers[-2]
    weights = layer.weight
    if weights.size == 0:
        raise ArgumentError("penultimate layer is empty")
    baseline = evaluate(net, eval_data).accuracy
    mags = np.abs(weights)
    cand = np.unique(mags)

    def acc_at(tau):
        trial = net.copy()
        trial.layers[-2].weight[mags <= tau] = 0.0
        return evaluate(trial, eval_data).accuracy

    # invariant: cand[lo] feasible (lo == -1 means prune nothing), cand[hi + 1] not yet known feasible
    lo, hi = -1, cand.size - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if acc_at(cand[mid]) >= baseline - budget:
            lo = mid
        else:
            hi = mid - 1
    tau = float(cand[lo]) if lo >= 0 else -1.0
    out = net.copy()
    keep = ~(mags <= tau)
    out.layers[-2].weight[~keep] = 0.0
    return out, PruneMask(f"layer{layer.layer_index}.weight", keep, tau)


def rwd(net: Network, p, seed):
    """Zero each parameter independently with probability ``p``. Returns ``(net, masks)``."""
    if not 0.0 <= p <= 1.0:
        raise ArgumentError("p must lie in [0, 1]")
    out = net.copy()
    rng = make_rng(seed, 0x3D0)
    masks = []
    for name, param in zip(_param_names(out), out.parameters()):
        keep = rng.random(param.shape) >= p
        param[~keep] = 0.0
        masks.append(PruneMask(name, keep))
    return out, masks


def _apply_masks(net, masks):
    lookup = dict(zip(_param_names(net), net.parameters()))
    for m in masks:
        lookup[m.name][~m.mask] = 0.0


def fine_tune(net, method: MitigationMethod, train_data, masks=(), callback=None):
    """Fine-tune ``net`` in place on the utility loss. Returns ``(loss_curve, steps)``."""
    x, y = train_data.flat(), train_data.labels
    rng = make_rng(method.seed, 0xF7)
    steps_per_epoch = -(-len(train_data) // method.batch_size)
    total = steps_per_epoch * method.epochs
    state = OptimizerState.for_network(net, weight_decay=method.weight_decay)
    curve, step = [], 0
    for epoch in range(method.epochs):
        running = 0.0
        for idx in minibatches(len(train_data), method.batch_size, rng):
            try:
                value, grads = backward(net, x[idx], y[idx])
            except NumericError as exc:
                raise NumericError(f"fine-tuning diverged at step {step}: {exc}") from None
            if not np.isfinite(value):
                raise NumericError(f"fine-tuning diverged at step {step}")
            rates = method.schedule.rates(step, total, net.num_layers)
            if method.optimizer == "adamw":
                adamw_step(net, grads, state, rates)
            else:
                sgd_step(net, grads, None, method.weight_decay, rates=rates)
            if masks:
                _apply_masks(net, masks)
            running += value * idx.size
            step += 1
        curve.append(running / len(train_data))
        if callback is not None:
            callback(epoch + 1, net)
    return curve, step


def mitigate(net: Network, method: MitigationMethod, train_data, eval_data=None, callback=None):
    """Sanitize a copy of ``net``. Returns ``(sanitized_net, MitigationReport)``.

    ``eval_data`` is only used by Fine-Pruning's accuracy budget and defaults to
    the training data, the one dataset the defender is assumed to hold.
    """
    if len(train_data) == 0:
        raise ArgumentError("training data is empty")
    start = time.perf_counter()
    masks, tau = [], None
    if method.kind == "rwp_ft":
        out = rwp(net, method.sigma, method.seed)
    elif method.kind == "fine_prune_ft":
        out, mask = fine_prune(net, eval_data if eval_data is not None else train_data, method.prune_acc_budget)
        masks, tau = [mask], mask.threshold
    elif method.kind == "rwd_ft":
        out, masks = rwd(net, method.drop_prob, method.seed)
    else:
        out = net.copy()
    curve, steps = fine_tune(out, method, train_data, masks, callback) if method.epochs else ([], 0)
    elapsed = time.perf_counter() - start
    sched = method.schedule
    if sched.kind == "super_ft":
        rates = [sched.eta_base, sched.eta_max, sched.eta_max_phase2]
    else:
        rates = sched.rates(0, 1, out.num_layers)
    report = MitigationReport(
        method.kind,
        method.optimizer,
        method.epochs,
        steps,
        elapsed,
        curve,
        rates,
        {m.name: m.zeroed_fraction for m in masks},
        tau,
    )
    return out, report
