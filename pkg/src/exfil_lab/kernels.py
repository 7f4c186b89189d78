"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names at the bottom are bound once at import time according to
``_accel.USE_NUMBA``. Both flavours stay importable so the benchmark and the
equivalence tests can call them side by side.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

LOW16 = np.uint32(0xFFFF)
HIGH16 = np.uint32(0xFFFF0000)


# --- LSB embedding ---------------------------------------------------------

def embed_low16_numpy(bits, words):
    out = bits.copy()
    k = words.shape[0]
    out[:k] = (out[:k] & HIGH16) | words.astype(np.uint32)
    return out


@njit(cache=True)
def embed_low16_numba(bits, words):
    out = bits.copy()
    for i in range(words.shape[0]):
        out[i] = (out[i] & np.uint32(0xFFFF0000)) | np.uint32(words[i])
    return out


# --- popcount of XOR -------------------------------------------------------

def _popcount_numpy(x):
    if hasattr(np, "bitwise_count"):
        return int(np.bitwise_count(x).sum(dtype=np.int64))
    return int(np.unpackbits(x.view(np.uint8)).sum(dtype=np.int64))


def count_bit_errors_numpy(a, b):
    return _popcount_numpy(np.bitwise_xor(a, b))


@njit(cache=True)
def count_bit_errors_numba(a, b):
    total = 0
    for i in range(a.shape[0]):
        # SWAR popcount of a 32-bit word
        x = np.uint32(a[i] ^ b[i])
        x = x - ((x >> np.uint32(1)) & np.uint32(0x55555555))
        x = (x & np.uint32(0x33333333)) + ((x >> np.uint32(2)) & np.uint32(0x33333333))
        x = (x + (x >> np.uint32(4))) & np.uint32(0x0F0F0F0F)
        total += np.uint32(x * np.uint32(0x01010101)) >> np.uint32(24)
    return total


# --- separable Gaussian filter, valid padding ------------------------------

def gaussian_filter_valid_numpy(images, kernel):
    """Correlate every image of a ``[N, H, W]`` stack with ``outer(kernel, kernel)``."""
    w = kernel.shape[0]
    rows = np.lib.stride_tricks.sliding_window_view(images, w, axis=2) @ kernel
    return np.lib.stride_tricks.sliding_window_view(rows, w, axis=1) @ kernel


@njit(cache=True)
def gaussian_filter_valid_numba(images, kernel):
    n, h, wd = images.shape
    w = kernel.shape[0]
    oh = h - w + 1
    ow = wd - w + 1
    rows = np.empty((n, h, ow))
    for i in range(n):
        for r in range(h):
            for c in range(ow):
                acc = 0.0
                for k in range(w):
                    acc += images[i, r, c + k] * kernel[k]
                rows[i, r, c] = acc
    out = np.empty((n, oh, ow))
    for i in range(n):
        for r in range(oh):
            for c in range(ow):
                acc = 0.0
                for k in range(w):
                    acc += rows[i, r + k, c] * kernel[k]
                out[i, r, c] = acc
    return out


if USE_NUMBA:
    embed_low16 = embed_low16_numba
    count_bit_errors = count_bit_errors_numba
    gaussian_filter_valid = gaussian_filter_valid_numba
else:
    embed_low16 = embed_low16_numpy
    count_bit_errors = count_bit_errors_numpy
    gaussian_filter_valid = gaussian_filter_valid_numpy
