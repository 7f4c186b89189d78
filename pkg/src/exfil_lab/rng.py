"""Seeded randomness.

Uniform draws come from numpy's PCG64; Gaussian noise is produced with the
basic Box-Muller transform on top of those uniforms so the noise stream is a
fixed function of the seed, independent of numpy's normal sampler.
"""
import numpy as np


def make_rng(seed, *stream):
    """PCG64 generator keyed by ``seed`` and an optional tuple of sub-stream ids."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def box_muller(u1, u2):
    # u1 must lie in (0, 1]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    return r * np.cos(theta), r * np.sin(theta)


def gaussian(rng, size, sigma=1.0):
    size = int(size)
    half = (size + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    z1, z2 = box_muller(u1, u2)
    z = np.empty(2 * half)
    z[0::2] = z1
    z[1::2] = z2
    return sigma * z[:size]
