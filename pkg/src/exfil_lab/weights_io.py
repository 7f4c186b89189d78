"""``.mwt`` weight archives: bit-exact binary32 model export.

Layout (all integers little-endian)::

    "MWT1" | u32 version=1 | u32 entry_count
    per entry: u16 name_len | name (UTF-8) | u8 dtype (0=binary32) | u8 ndim
               | ndim x u32 dims | prod(dims) x binary32 values

Entries follow layer order with each weight before its bias. That order is
also the order in which the stego codec walks parameters.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import kernels
from .errors import ArgumentError, NumericError, ParseError
from .nn import DenseLayer, Network

MAGIC = b"MWT1"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sII")
_F32 = np.dtype("<f4")
_U32 = np.dtype("<u4")


@dataclass
class ArchiveEntry:
    name: str
    dims: Tuple[int, ...]
    values: np.ndarray  # float32, flat

    @property
    def size(self):
        return int(self.values.size)


@dataclass
class WeightArchive:
    entries: List[ArchiveEntry] = field(default_factory=list)
    version: int = VERSION

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.name in seen:
                raise ArgumentError(f"duplicate entry name {e.name!r}")
            seen.add(e.name)
            if int(np.prod(e.dims, dtype=np.int64)) != e.values.size:
                raise ArgumentError(f"entry {e.name!r}: dims {e.dims} do not match {e.values.size} values")

    @property
    def num_params(self):
        return sum(e.size for e in self.entries)

    def names(self):
        return [e.name for e in self.entries]

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e.values.reshape(e.dims)
        raise KeyError(name)

    def flat_bits(self):
        """All values as one uint32 array of raw binary32 bit patterns."""
        if not self.entries:
            return np.zeros(0, dtype=np.uint32)
        return np.concatenate([e.values.astype(_F32).view(np.uint32) for e in self.entries])

    def with_flat_bits(self, bits):
        bits = np.ascontiguousarray(bits, dtype=np.uint32)
        if bits.size != self.num_params:
            raise ArgumentError(f"expected {self.num_params} words, got {bits.size}")
        out, pos = [], 0
        for e in self.entries:
            out.append(ArchiveEntry(e.name, e.dims, bits[pos : pos + e.size].view(np.float32).copy()))
            pos += e.size
        return WeightArchive(out, self.version)

    def flat_values(self):
        if not self.entries:
            return np.zeros(0)
        return np.concatenate([e.values.astype(np.float64) for e in self.entries])


def to_archive(net: Network) -> WeightArchive:
    entries = []
    for layer in net.layers:
        for kind, arr in (("weight", layer.weight), ("bias", layer.bias)):
            if not np.isfinite(arr).all():
                raise NumericError(f"layer {layer.layer_index} {kind} has non-finite values; refusing to export")
            with np.errstate(over="ignore"):
                values = np.ascontiguousarray(arr, dtype=np.float64).astype(np.float32).reshape(-1)
            if not np.isfinite(values).all():
                raise NumericError(f"layer {layer.layer_index} {kind} overflows binary32")
            entries.append(ArchiveEntry(f"layer{layer.layer_index}.{kind}", tuple(arr.shape), values))
    return WeightArchive(entries)


def to_network(archive: WeightArchive, activations=None) -> Network:
    """Rebuild a network from ``layer{k}.weight`` / ``layer{k}.bias`` entries."""
    if archive.num_params and len(archive.entries) % 2:
        raise ArgumentError("archive does not hold weight/bias pairs")
    n_layers = len(archive.entries) // 2
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["identity"] if n_layers else []
    layers = []
    for k in range(n_layers):
        w = archive[f"layer{k + 1}.weight"].astype(np.float64)
        b = archive[f"layer{k + 1}.bias"].astype(np.float64)
        layers.append(DenseLayer(w.copy(), b.copy(), activations[k]))
    return Network(layers)


def encode_archive(archive: WeightArchive) -> bytes:
    parts = [_HEADER.pack(MAGIC, archive.version, len(archive.entries))]
    for e in archive.entries:
        name = e.name.encode("utf-8")
        if len(name) > 0xFFFF or len(e.dims) > 0xFF:
            raise ArgumentError(f"entry {e.name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BB", DTYPE_F32, len(e.dims)))
        parts.append(np.asarray(e.dims, dtype=_U32).tobytes())
        parts.append(np.ascontiguousarray(e.values, dtype=_F32).tobytes())
    return b"".join(parts)


def write_archive(net_or_archive, path) -> int:
    """Serialize a network (or an already built archive). Returns bytes written."""
    archive = net_or_archive if isinstance(net_or_archive, WeightArchive) else to_archive(net_or_archive)
    data = encode_archive(archive)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated file while reading {what}: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def decode_archive(data: bytes) -> WeightArchive:
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise ParseError(f"unsupported archive version {version}", 4)
    (count,) = struct.unpack("<I", r.take(4, "entry count"))
    entries, names = [], set()
    for _ in range(count):
        start = r.pos
        (name_len,) = struct.unpack("<H", r.take(2, "name length"))
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("entry name is not valid UTF-8", start + 2) from None
        if name in names:
            raise ParseError(f"duplicate entry name {name!r}", start)
        names.add(name)
        dtype_pos = r.pos
        dtype, ndim = struct.unpack("<BB", r.take(2, "dtype/ndim"))
        if dtype != DTYPE_F32:
            raise ParseError(f"unknown dtype code {dtype} for entry {name!r}", dtype_pos)
        dims_pos = r.pos
        dims = tuple(int(d) for d in np.frombuffer(r.take(4 * ndim, "dims"), dtype=_U32))
        count_vals = 1
        for d in dims:
            count_vals *= d
        if count_vals > 2**32:
            raise ParseError(f"dims {dims} of entry {name!r} overflow", dims_pos)
        raw = r.take(4 * count_vals, f"values of {name!r}")
        entries.append(ArchiveEntry(name, dims, np.frombuffer(raw, dtype=_F32).astype(np.float32)))
    if r.pos != len(data):
        raise ParseError(f"{len(data) - r.pos} trailing bytes after last entry", r.pos)
    return WeightArchive(entries, version)


def read_archive(path) -> WeightArchive:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        return decode_archive(fh.read())


def diff_archives(a: WeightArchive, b: WeightArchive):
    """Elementwise change statistics between two structurally identical archives."""
    if [(e.name, tuple(e.dims)) for e in a.entries] != [(e.name, tuple(e.dims)) for e in b.entries]:
        raise ArgumentError("archives differ in entry names or dims")
    p = a.num_params
    if p == 0:
        return {"max_abs": 0.0, "mean_abs": 0.0, "changed_param_fraction": 0.0, "changed_bit_fraction": 0.0}
    delta = np.abs(a.flat_values() - b.flat_values())
    bits_a, bits_b = a.flat_bits(), b.flat_bits()
    return {
        "max_abs": float(delta.max()),
        "mean_abs": float(delta.mean()),
        "changed_param_fraction": float(np.count_nonzero(bits_a != bits_b) / p),
        "changed_bit_fraction": kernels.count_bit_errors(bits_a, bits_b) / (32.0 * p),
    }
