"""Synthetic image-classification data and the ``.mds`` dataset format.

``.mds`` layout (little-endian)::

    "MDS1" | u32 N | u32 H | u32 W | u32 K | N x u16 labels | N*H*W binary32 pixels
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DataValidationError, ParseError
from .rng import make_rng

MAGIC = b"MDS1"
_HEADER = struct.Struct("<4sIIII")


@dataclass
class Dataset:
    images: np.ndarray  # float32 [N, H, W] in [0, 1]
    labels: np.ndarray  # int64 [N]
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.images.ndim != 3:
            raise ArgumentError(f"images must be [N, H, W], got {self.images.shape}")
        if self.images.shape[0] != self.labels.size:
            raise ArgumentError(f"{self.images.shape[0]} images but {self.labels.size} labels")

    def __len__(self):
        return self.labels.size

    @property
    def shape(self):
        return self.images.shape[1:]

    def flat(self):
        """Images as a float64 ``[N, H*W]`` design matrix."""
        return self.images.reshape(len(self), -1).astype(np.float64)

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.split)


@dataclass
class SynthSpec:
    num_classes: int = 8
    n_train: int = 512
    n_test: int = 512
    size: int = 16
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ArgumentError("need at least 2 classes")
        if self.size < 8:
            raise ArgumentError("image size must be >= 8")
        if self.noise_std < 0:
            raise ArgumentError("noise_std must be >= 0")
        if self.num_classes > 0xFFFF:
            raise ArgumentError("labels are stored as u16")


def class_pattern(k, num_classes, size):
    """Noise-free template for class ``k`` with values in [0.15, 1]."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    if k % 2 == 0:
        theta = np.pi * k / num_classes
        g = np.cos(theta) * x + np.sin(theta) * y
        pattern = (g - g.min()) / (np.ptp(g) or 1.0)
    else:
        cells = (np.floor(2 * k * x / size) + np.floor(2 * k * y / size)) % 2
        pattern = cells
    phi = 2.0 * np.pi * k / num_classes
    cx = (size - 1) / 2.0 + size / 4.0 * np.cos(phi)
    cy = (size - 1) / 2.0 + size / 4.0 * np.sin(phi)
    blob = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * (size / 8.0) ** 2))
    return 0.15 + 0.55 * pattern + 0.3 * blob


def _balanced_labels(rng, n, k):
    return rng.permutation(np.arange(n) % k)


def _make_split(spec, n, stream, split):
    rng = make_rng(spec.seed, 0xDA7A, stream)
    labels = _balanced_labels(rng, n, spec.num_classes)
    templates = np.stack([class_pattern(k, spec.num_classes, spec.size) for k in range(spec.num_classes)])
    images = templates[labels]
    if spec.noise_std > 0:
        images = images + spec.noise_std * rng.standard_normal(images.shape)
    return Dataset(np.clip(images, 0.0, 1.0), labels, spec.num_classes, split)


def synth_generate(spec: SynthSpec):
    """Deterministic ``(train, test)`` pair drawn from disjoint seed streams."""
    return _make_split(spec, spec.n_train, 1, "train"), _make_split(spec, spec.n_test, 2, "test")


def encode_dataset(ds: Dataset) -> bytes:
    n = len(ds)
    h, w = ds.images.shape[1:]
    return b"".join(
        [
            _HEADER.pack(MAGIC, n, h, w, ds.num_classes),
            ds.labels.astype("<u2").tobytes(),
            ds.images.astype("<f4").tobytes(),
        ]
    )


def save_dataset(ds: Dataset, path) -> int:
    data = encode_dataset(ds)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def decode_dataset(data: bytes, split="train") -> Dataset:
    if len(data) < _HEADER.size:
        raise ParseError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    magic, n, h, w, k = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    off = _HEADER.size
    expected = off + 2 * n + 4 * n * h * w
    if len(data) < expected:
        raise ParseError(f"truncated file: expected {expected} bytes, got {len(data)}", len(data))
    if len(data) > expected:
        raise ParseError(f"{len(data) - expected} trailing bytes", expected)
    labels = np.frombuffer(data, dtype="<u2", count=n, offset=off).astype(np.int64)
    images = np.frombuffer(data, dtype="<f4", count=n * h * w, offset=off + 2 * n).reshape(n, h, w)
    if n and labels.max() >= k:
        bad = int(np.argmax(labels >= k))
        raise DataValidationError(f"label {labels[bad]} of sample {bad} is >= K={k}", off + 2 * bad)
    if images.size and not (np.isfinite(images).all() and images.min() >= 0.0 and images.max() <= 1.0):
        bad = int(np.argmax(~((images >= 0) & (images <= 1)).reshape(-1)))
        raise DataValidationError(f"pixel {bad} outside [0, 1]", off + 2 * n + 4 * bad)
    return Dataset(images.astype(np.float32), labels, int(k), split)


def load_dataset(path, split="train") -> Dataset:
    with open(path, "rb") as fh:
        return decode_dataset(fh.read(), split)
