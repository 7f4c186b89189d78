"""Utility metrics (accuracy, macro AUC) and leakage metrics (SSIM, PSNR, BER)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .errors import ArgumentError, ShapeError, UndefinedAUCError

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_CAP = 100.0
PSNR_MSE_FLOOR = 1e-10


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _as_stack(images):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected [H, W] or [N, H, W] images, got shape {x.shape}")
    return x


def ssim_batch(a, b):
    """Per-image SSIM of two ``[N, H, W]`` stacks with dynamic range 1."""
    a, b = _as_stack(a), _as_stack(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise ArgumentError(f"images {a.shape[1:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    n = a.shape[0]
    stats = kernels.gaussian_filter_valid(
        np.ascontiguousarray(np.concatenate([a, b, a * a, b * b, a * b])), gaussian_window()
    )
    mu_a, mu_b, aa, bb, ab = (stats[i * n : (i + 1) * n] for i in range(5))
    var_a = aa - mu_a * mu_a
    var_b = bb - mu_b * mu_b
    cov = ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return (num / den).mean(axis=(1, 2))


def ssim(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError("ssim expects single 2-D images; use ssim_batch for stacks")
    return float(ssim_batch(a, b)[0])


def psnr_batch(a, b):
    a, b = _as_stack(a), _as_stack(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = ((a - b) ** 2).mean(axis=(1, 2))
    out = np.full(mse.shape, PSNR_CAP)
    ok = mse >= PSNR_MSE_FLOOR
    out[ok] = np.minimum(10.0 * np.log10(1.0 / mse[ok]), PSNR_CAP)
    return out


def psnr(a, b):
    return float(psnr_batch(a, b).mean())


def accuracy(logits, labels):
    logits = np.asarray(logits)
    labels = np.asarray(labels).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size or labels.size == 0:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _binary_auc(scores, positive):
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    ranks = rankdata(scores)  # ties get the average rank, i.e. credited 0.5
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def per_class_auc(scores, labels) -> Dict[int, float]:
    """One-vs-rest AUC per class; classes lacking positives or negatives are omitted."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if scores.ndim == 1:
        scores = np.stack([-scores, scores], axis=1)
    if scores.shape[0] != labels.size:
        raise ShapeError(f"scores {scores.shape} and labels {labels.shape} disagree")
    out = {}
    for k in range(scores.shape[1]):
        pos = labels == k
        if 0 < pos.sum() < labels.size:
            out[k] = float(_binary_auc(scores[:, k], pos))
    return out


def macro_auc(scores, labels):
    """Macro one-vs-rest Mann-Whitney AUC.

    A 1-D ``scores`` array is read as the positive-class score of a binary task
    with labels in {0, 1}.
    """
    per_class = per_class_auc(scores, labels)
    if not per_class:
        raise UndefinedAUCError("AUC undefined: no class has both positive and negative samples")
    return float(np.mean(list(per_class.values())))


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def bit_error_rate(sent, received):
    """Differing bits over ``16 * n`` for two equal-length 16-bit code arrays."""
    a = np.ascontiguousarray(sent, dtype=np.uint16).reshape(-1)
    b = np.ascontiguousarray(received, dtype=np.uint16).reshape(-1)
    if a.size != b.size:
        raise ArgumentError(f"code arrays differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    return kernels.count_bit_errors(a, b) / (16.0 * a.size)


@dataclass
class EvalResult:
    accuracy: float
    macro_auc: float
    per_class_auc: Dict[int, float] = field(default_factory=dict)
    excluded_classes: List[int] = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["per_class_auc"] = {str(k): v for k, v in self.per_class_auc.items()}
        return d


@dataclass
class LeakageResult:
    ssim_mean: float
    ssim_median: float
    psnr_mean: float
    ber: float = float("nan")

    def to_dict(self):
        d = asdict(self)
        if np.isnan(self.ber):
            d["ber"] = None  # no payload to compare (transpose)
        return d


def evaluate_logits(logits, labels) -> EvalResult:
    logits = np.asarray(logits, dtype=np.float64)
    probs = softmax(logits)
    per_class = per_class_auc(probs, labels)
    excluded = [k for k in range(logits.shape[1]) if k not in per_class]
    auc = float(np.mean(list(per_class.values()))) if per_class else float("nan")
    return EvalResult(accuracy(logits, labels), auc, per_class, excluded)


def leakage(reference, reconstructed, ber=float("nan")) -> LeakageResult:
    s = ssim_batch(reference, reconstructed)
    return LeakageResult(float(s.mean()), float(np.median(s)), psnr(reference, reconstructed), float(ber))
