"""Seed derivation and Gaussian sampling used by the experiment harness.

Replicate seeds are derived with a splitmix64 finalizer so that replicate r
of a study depends only on (master seed, stream tags, r), not on execution
order. Gaussian draws use the Box-Muller transform on uniforms from numpy's
PCG64 generator; the algorithm (not the exact bit stream) is what is meant
to be portable.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 output for state x (as a Python int in [0, 2^64))."""
    z = (int(x) + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _tag(t):
    if isinstance(t, str):
        return zlib.crc32(t.encode("utf-8"))
    return int(t) & _MASK


def derive_seed(master, *tags):
    """Mix a master seed with tags (ints or strings) into a 64-bit seed."""
    s = splitmix64(int(master) & _MASK)
    for t in tags:
        s = splitmix64(s ^ _tag(t))
    return s


def generator(master, *tags):
    return np.random.Generator(np.random.PCG64(derive_seed(master, *tags)))


def box_muller(rng, size):
    """Standard normals from pairs of uniforms: sqrt(-2 ln u1) cos(2 pi u2)."""
    size = int(size)
    m = (size + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
    return z[:size]


def normal(rng, mean=0.0, sd=1.0, size=1):
    return mean + sd * box_muller(rng, size)
