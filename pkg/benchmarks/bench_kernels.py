"""Time the numba and pure-numpy flavours of every hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat N]

Dense matmuls are not listed: both backends hand those to BLAS.
"""
import argparse
import timeit

import numpy as np

from exfil_lab import kernels
from exfil_lab._accel import HAS_NUMBA
from exfil_lab.metrics import gaussian_window


def cases(rng):
    bits = rng.integers(0, 2**32, size=1_000_000, dtype=np.uint32)
    words = rng.integers(0, 2**16, size=500_000, dtype=np.uint16)
    a = rng.integers(0, 2**16, size=1_000_000, dtype=np.uint16)
    b = rng.integers(0, 2**16, size=1_000_000, dtype=np.uint16)
    imgs = rng.random((160, 16, 16))
    win = gaussian_window()
    return [
        ("embed_low16 (1e6 weights)", kernels.embed_low16_numpy, kernels.embed_low16_numba, (bits, words)),
        ("count_bit_errors (1e6 codes)", kernels.count_bit_errors_numpy, kernels.count_bit_errors_numba, (a, b)),
        ("gaussian_filter_valid (160x16x16)", kernels.gaussian_filter_valid_numpy, kernels.gaussian_filter_valid_numba, (imgs, win)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {HAS_NUMBA}")
    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb, argv in cases(rng):
        ref = f_np(*argv)
        got = f_nb(*argv)  # also triggers compilation outside the timed region
        assert np.allclose(ref, got), name
        t_np = min(timeit.repeat(lambda: f_np(*argv), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*argv), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:36s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
