"""16-bit latent quantizer and low-half LSB embedding into binary32 weights.

A payload is the word stream ``[n, D, code_0, ..., code_{nD-1}]``. Word k
replaces the low 16 bits of the k-th parameter in archive order; the upper
half (sign, exponent, top 7 mantissa bits) is never touched, so every normal
weight moves by less than 2**-7 of its magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ArgumentError, CapacityError, MalformedPayloadError
from .weights_io import WeightArchive

HEADER_WORDS = 2
MAX_CODE = 0xFFFF


@dataclass(frozen=True)
class QuantizerConfig:
    shift: float = 1.0
    scale: float = 20000.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ArgumentError("quantizer scale must be > 0")

    @property
    def min_val(self):
        return -self.shift

    @property
    def max_val(self):
        return MAX_CODE / self.scale - self.shift


@dataclass
class StegoPayload:
    latent_dim: int
    codes: np.ndarray  # uint16, flat, length n * latent_dim

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.uint16).reshape(-1)
        if not 1 <= self.latent_dim <= MAX_CODE and not (self.latent_dim == 0 and self.codes.size == 0):
            raise ArgumentError(f"latent_dim {self.latent_dim} outside [1, 65535]")
        if self.latent_dim and self.codes.size % self.latent_dim:
            raise ArgumentError("code count is not a multiple of latent_dim")
        if self.count > MAX_CODE:
            raise ArgumentError(f"payload holds {self.count} vectors, header caps n at 65535")

    @property
    def count(self):
        return self.codes.size // self.latent_dim if self.latent_dim else 0

    def words(self):
        header = np.array([self.count, self.latent_dim], dtype=np.uint16)
        return np.concatenate([header, self.codes])

    def matrix(self):
        return self.codes.reshape(self.count, self.latent_dim)


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(values, cfg: QuantizerConfig = QuantizerConfig(), return_clamped=False):
    """Map latents to 16-bit codes: ``round((v + shift) * scale)``, clamped.

    Halves round away from zero. With ``return_clamped`` the number of inputs
    that fell outside ``[cfg.min_val, cfg.max_val]`` is returned as well.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ArgumentError("cannot quantize non-finite values")
    raw = _round_half_away((v + cfg.shift) * cfg.scale)
    clamped = int(np.count_nonzero((raw < 0) | (raw > MAX_CODE)))
    codes = np.clip(raw, 0, MAX_CODE).astype(np.uint16)
    return (codes, clamped) if return_clamped else codes


def dequantize(codes, cfg: QuantizerConfig = QuantizerConfig()):
    return np.asarray(codes, dtype=np.float64) / cfg.scale - cfg.shift


def capacity(num_params, latent_dim):
    """Storable latent vectors, one code per parameter, header excluded."""
    if latent_dim < 1:
        raise ArgumentError("latent_dim must be >= 1")
    return int(num_params) // int(latent_dim)


def embed(archive: WeightArchive, payload: StegoPayload) -> WeightArchive:
    words = payload.words()
    p = archive.num_params
    if words.size > p:
        raise CapacityError(p, payload.count, payload.latent_dim)
    bits = kernels.embed_low16(archive.flat_bits(), words)
    return archive.with_flat_bits(bits)


def low_words(archive: WeightArchive, count=None, offset=0):
    """Low 16 bits of ``count`` parameters starting at ``offset``."""
    bits = archive.flat_bits()
    end = bits.size if count is None else offset + count
    if end > bits.size:
        raise MalformedPayloadError(f"requested words [{offset}, {end}) but archive has {bits.size} parameters")
    return (bits[offset:end] & kernels.LOW16).astype(np.uint16)


def extract(archive: WeightArchive) -> StegoPayload:
    """Read back ``(n, D)`` and the ``n*D`` codes. No plausibility checks."""
    p = archive.num_params
    if p < HEADER_WORDS:
        raise MalformedPayloadError(f"archive has {p} parameters, need at least {HEADER_WORDS}")
    n, dim = (int(w) for w in low_words(archive, HEADER_WORDS))
    if HEADER_WORDS + n * dim > p:
        raise MalformedPayloadError(f"header claims n={n}, D={dim} but archive holds only P={p} parameters")
    if dim == 0:
        if n:
            raise MalformedPayloadError(f"header claims n={n} vectors of dimension 0")
        return StegoPayload(0, np.zeros(0, dtype=np.uint16))
    return StegoPayload(dim, low_words(archive, n * dim, HEADER_WORDS))
