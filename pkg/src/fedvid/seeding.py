"""Seed derivation and the few random primitives that must agree bitwise."""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# Domain tags keep sub-seed streams for different purposes apart.
TAG_INIT = 1
TAG_CLIENT_HEAD = 2
TAG_SAMPLE = 3
TAG_CLIENT_TRAIN = 4
TAG_EPOCH = 5
TAG_PERTURB = 6
TAG_LANDSCAPE = 7
TAG_PROBE = 8
TAG_CENTRAL = 9
TAG_EVAL_BATCH = 10


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix(*parts: int) -> int:
    """Fold integers into one 64-bit seed with SplitMix64.

    The result depends on the order of ``parts``; negative values are
    reduced modulo 2**64 first.
    """
    h = 0
    for p in parts:
        h = _splitmix64(h ^ (int(p) & _MASK))
    return h


def rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(mix(*parts))


def box_muller(gen: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal samples built from ``gen.random`` via Box-Muller.

    Consumes ``2 * ceil(size / 2)`` uniforms; pairs yield (cos, sin) draws
    interleaved.
    """
    n_pairs = (size + 1) // 2
    u = gen.random(2 * n_pairs)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(2 * n_pairs)
    out[0::2] = r * np.cos(2.0 * np.pi * u2)
    out[1::2] = r * np.sin(2.0 * np.pi * u2)
    return out[:size]
