"""Desk-scale Transpose and DEC exfiltration attacks.

Transpose trains one dense network in both directions: forward for the visible
classifier, and through its weight-shared transpose to regress memorised
images from per-sample key vectors. DEC compresses images with a toy codec and
hides the quantized latents in the low halves of the exported weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ArgumentError, MalformedPayloadError, ShapeError, UnsupportedLayerError
from .nn import DenseLayer, Network, backward, forward, transpose_network
from .optim import OptimizerState, StepDecay, adamw_step
from .rng import make_rng
from .stego import HEADER_WORDS, QuantizerConfig, StegoPayload, dequantize, embed, extract, low_words, quantize
from .training import DEFAULT_BATCH_SIZE, minibatches
from .weights_io import WeightArchive, to_archive


# --- Transpose -------------------------------------------------------------

REV_OUT = "identity"

@dataclass
class TransposeConfig:
    num_targets: int = 32
    lr_cls: float = 1e-4
    lr_mem: float = 1e-3
    mem_decay_factor: float = 0.5
    mem_decay_every: float = 0.25
    key_seed: int = 0
    key_noise_scale: float = 0.1
    epochs: int = 60
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.num_targets < 1:
            raise ArgumentError("num_targets must be >= 1")
        if self.lr_cls < 0 or self.lr_mem < 0:
            raise ArgumentError("learning rates must be >= 0")


@dataclass
class ReverseParams:
    """Biases and activations of the reverse (memorisation) direction."""

    biases: List[np.ndarray]
    activations: List[str]

    @classmethod
    def init(cls, net):
        rev = net.layers[::-1]
        return cls([np.zeros(l.in_dim) for l in rev], ["relu"] * (len(rev) - 1) + [REV_OUT])


def key_vector(index, label, num_classes, seed, noise_scale=0.1):
    """``one_hot(label) + noise_scale * g(index)`` with ``g`` a unit vector fixed by (seed, index)."""
    if not 0 <= label < num_classes:
        raise ArgumentError(f"label {label} outside [0, {num_classes})")
    g = make_rng(seed, 0x4E7, index).standard_normal(num_classes)
    key = np.zeros(num_classes)
    key[label] = 1.0
    return key + noise_scale * g / np.linalg.norm(g)


def target_keys(labels, num_classes, seed, noise_scale=0.1):
    return np.stack([key_vector(i, int(y), num_classes, seed, noise_scale) for i, y in enumerate(labels)])


def _require_dense(net):
    for layer in net.layers:
        if not isinstance(layer, DenseLayer):
            raise UnsupportedLayerError(f"{type(layer).__name__} cannot be transposed")


def transpose_train(net: Network, ds, cfg: TransposeConfig, reverse: Optional[ReverseParams] = None, callback=None):
    """Dual-task training: a classification step then a memorisation step, every step.

    Memorisation targets are the first ``cfg.num_targets`` training images. Returns
    ``(net, reverse_params)``; ``net`` is updated in place.
    """
    _require_dense(net)
    n = min(cfg.num_targets, len(ds))
    if reverse is None:
        reverse = ReverseParams.init(net)
    x, y = ds.flat(), ds.labels
    targets = x[:n]
    keys = target_keys(y[:n], net.output_dim, cfg.key_seed, cfg.key_noise_scale)
    rev_net = transpose_network(net, reverse.biases, reverse.activations)
    if [l.in_dim for l in rev_net.layers] != [l.out_dim for l in net.layers[::-1]] or keys.shape[1] != rev_net.input_dim:
        raise ShapeError("reverse network does not map keys to images")
    cls_state = OptimizerState.for_network(net)
    mem_state = OptimizerState.for_network(rev_net)
    mem_sched = StepDecay(cfg.lr_mem, cfg.mem_decay_factor, cfg.mem_decay_every) if cfg.lr_mem > 0 else None
    rng = make_rng(cfg.seed, 0x7A2)
    for epoch in range(cfg.epochs):
        for idx in minibatches(len(ds), cfg.batch_size, rng):
            if cfg.lr_cls > 0:
                _, grads = backward(net, x[idx], y[idx])
                adamw_step(net, grads, cls_state, [cfg.lr_cls] * net.num_layers)
            if mem_sched is not None:
                _, grads = backward(rev_net, keys, targets, "mean_squared_error")
                adamw_step(rev_net, grads, mem_state, [mem_sched(epoch, cfg.epochs)] * rev_net.num_layers)
        if callback is not None:
            callback(epoch + 1, net, reverse)
    # rev_net's biases are the arrays held by ``reverse`` and were updated in place
    return net, reverse


def transpose_reconstruct(net, reverse: ReverseParams, keys, image_shape):
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if keys.shape[1] != net.output_dim:
        raise ShapeError(f"keys have {keys.shape[1]} dims, network output is {net.output_dim}")
    if int(np.prod(image_shape)) != net.input_dim:
        raise ShapeError(f"image shape {image_shape} does not match input_dim {net.input_dim}")
    out = forward(transpose_network(net, reverse.biases, reverse.activations), keys)
    return np.clip(out, 0.0, 1.0).reshape(len(keys), *image_shape)


# --- DEC -------------------------------------------------------------------

@dataclass
class DecCodec:
    """Toy stand-in for a learned image compressor.

    ``downsample_affine`` area-averages to a ``sqrt(D) x sqrt(D)`` grid and maps
    [0, 1] affinely onto the latent range. ``linear_autoencoder`` uses a PCA
    basis fitted on held-out images (the MSE-optimal linear autoencoder).
    """

    kind: str = "downsample_affine"
    latent_dim: int = 64
    image_shape: tuple = (16, 16)
    lo: float = QuantizerConfig().min_val
    hi: float = QuantizerConfig().max_val
    mean: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None  # [D, H*W], orthonormal rows
    z_lo: Optional[np.ndarray] = None
    z_hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("downsample_affine", "linear_autoencoder"):
            raise ArgumentError(f"unknown codec kind {self.kind!r}")
        h, w = self.image_shape
        if self.latent_dim < 1 or self.latent_dim > h * w:
            raise ArgumentError(f"latent_dim {self.latent_dim} must lie in [1, {h * w}]")
        if not self.lo < self.hi:
            raise ArgumentError("latent range is empty")
        if self.kind == "downsample_affine":
            self._grid()

    def _grid(self):
        h, w = self.image_shape
        side = int(round(np.sqrt(self.latent_dim)))
        if side * side != self.latent_dim or h % side or w % side:
            raise ArgumentError(f"D={self.latent_dim} is not a square grid dividing {self.image_shape}")
        return side, h // side, w // side

    @classmethod
    def fit_linear(cls, images, latent_dim, lo=None, hi=None):
        images = np.asarray(images, dtype=np.float64)
        n, h, w = images.shape
        flat = images.reshape(n, -1)
        mean = flat.mean(axis=0)
        _, _, vt = np.linalg.svd(flat - mean, full_matrices=False)
        if latent_dim > vt.shape[0]:
            raise ArgumentError(f"need at least {latent_dim} held-out images to fit D={latent_dim}")
        basis = vt[:latent_dim]
        z = (flat - mean) @ basis.T
        q = QuantizerConfig()
        return cls(
            "linear_autoencoder",
            latent_dim,
            (h, w),
            q.min_val if lo is None else lo,
            q.max_val if hi is None else hi,
            mean,
            basis,
            z.min(axis=0),
            np.maximum(z.max(axis=0), z.min(axis=0) + 1e-12),
        )


def dec_encode(images, codec: DecCodec):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    if images.shape[1:] != tuple(codec.image_shape):
        raise ShapeError(f"images {images.shape[1:]} do not match codec {codec.image_shape}")
    n = images.shape[0]
    if codec.kind == "downsample_affine":
        side, fh, fw = codec._grid()
        unit = images.reshape(n, side, fh, side, fw).mean(axis=(2, 4)).reshape(n, -1)
    else:
        if codec.basis is None:
            raise ArgumentError("linear codec is not fitted")
        z = (images.reshape(n, -1) - codec.mean) @ codec.basis.T
        unit = (z - codec.z_lo) / (codec.z_hi - codec.z_lo)
    return np.clip(codec.lo + unit * (codec.hi - codec.lo), codec.lo, codec.hi)


def dec_decode(latents, codec: DecCodec):
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if latents.shape[1] != codec.latent_dim:
        raise ShapeError(f"latents have {latents.shape[1]} dims, codec expects {codec.latent_dim}")
    n = latents.shape[0]
    h, w = codec.image_shape
    unit = (latents - codec.lo) / (codec.hi - codec.lo)
    if codec.kind == "downsample_affine":
        side, fh, fw = codec._grid()
        grid = unit.reshape(n, side, 1, side, 1)
        img = np.broadcast_to(grid, (n, side, fh, side, fw)).reshape(n, h, w)
    else:
        z = codec.z_lo + unit * (codec.z_hi - codec.z_lo)
        img = (z @ codec.basis + codec.mean).reshape(n, h, w)
    return np.clip(img, 0.0, 1.0)


@dataclass
class DecExport:
    archive: WeightArchive
    payload: StegoPayload
    clamped: int = 0


def dec_attack_export(net, images, codec: DecCodec, qcfg: QuantizerConfig = QuantizerConfig()) -> DecExport:
    """Export ``net`` with the quantized latents of ``images`` in the weight low bits."""
    images = np.asarray(images, dtype=np.float64).reshape(-1, *codec.image_shape)
    latents = dec_encode(images, codec) if len(images) else np.zeros((0, codec.latent_dim))
    codes, clamped = quantize(latents, qcfg, return_clamped=True)
    payload = StegoPayload(codec.latent_dim, codes.reshape(-1))
    return DecExport(embed(to_archive(net), payload), payload, clamped)


def dec_extract_codes(archive: WeightArchive, count=None, latent_dim=None):
    """Codes read back from ``archive`` plus an error message if the header was unusable.

    With ``count`` and ``latent_dim`` known (attacker-side metadata) the code
    words are read at their fixed positions even when the header is corrupt.
    """
    try:
        payload = extract(archive)
    except MalformedPayloadError as exc:
        payload, problem = None, str(exc)
    else:
        problem = None
        if count is not None and (payload.count, payload.latent_dim) != (count, latent_dim):
            problem = f"header reads n={payload.count}, D={payload.latent_dim}; expected n={count}, D={latent_dim}"
            payload = None
    if payload is None:
        if count is None:
            raise MalformedPayloadError(problem)
        payload = StegoPayload(latent_dim, low_words(archive, count * latent_dim, HEADER_WORDS))
    return payload, problem


def dec_reconstruct(archive, codec: DecCodec, qcfg=QuantizerConfig(), count=None):
    payload, problem = dec_extract_codes(archive, count, codec.latent_dim if count is not None else None)
    if payload.latent_dim != codec.latent_dim:
        raise ShapeError(f"payload D={payload.latent_dim} does not match codec D={codec.latent_dim}")
    images = dec_decode(dequantize(payload.matrix(), qcfg), codec) if payload.count else np.zeros((0, *codec.image_shape))
    return images, payload, problem
