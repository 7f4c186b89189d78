"""The numba and numpy flavours of every kernel must agree exactly (or to rounding)."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exfil_lab import kernels
from exfil_lab._accel import HAS_NUMBA, backend
from exfil_lab.metrics import gaussian_window

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 200), st.integers(0, 200))
def test_embed_low16_agree(seed, n_bits, n_words):
    r = np.random.default_rng(seed)
    n_words = min(n_words, n_bits)
    bits = r.integers(0, 2**32, n_bits, dtype=np.uint32)
    words = r.integers(0, 2**16, n_words, dtype=np.uint16)
    assert np.array_equal(kernels.embed_low16_numpy(bits, words), kernels.embed_low16_numba(bits, words))


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([np.uint16, np.uint32]))
def test_popcount_agree(seed, dtype):
    r = np.random.default_rng(seed)
    hi = np.iinfo(dtype).max + 1
    a, b = r.integers(0, hi, 300, dtype=dtype), r.integers(0, hi, 300, dtype=dtype)
    assert kernels.count_bit_errors_numpy(a, b) == kernels.count_bit_errors_numba(a, b)


@needs_numba
def test_gaussian_filter_agree(rng):
    imgs = rng.random((6, 16, 13))
    k = gaussian_window()
    assert np.allclose(kernels.gaussian_filter_valid_numpy(imgs, k), kernels.gaussian_filter_valid_numba(imgs, k), atol=1e-13)


def test_gaussian_filter_constant_image():
    out = kernels.gaussian_filter_valid(np.full((1, 9, 9), 0.3), gaussian_window())
    assert out.shape == (1, 3, 3) and np.allclose(out, 0.3)


def test_env_flag_selects_numpy():
    env = dict(os.environ, EXFIL_LAB_NUMBA="0")
    code = "from exfil_lab._accel import backend; from exfil_lab import kernels; print(backend(), kernels.embed_low16 is kernels.embed_low16_numpy)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out == ["numpy", "True"]


def test_backend_reports_choice():
    assert backend() in ("numba", "numpy")
