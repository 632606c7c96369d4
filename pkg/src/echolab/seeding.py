"""Seed derivation and counter-based point sampling."""

from __future__ import annotations

import numpy as np


def derive_seed(*keys: int) -> int:
    """Hash a tuple of non-negative integers into a 63-bit seed.

    Depends only on ``keys``, so work items seeded this way give the same
    stream whatever order or process they run in.
    """
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def uniform_points(lo, hi, count: int, seed: int) -> np.ndarray:
    """``count`` points uniform in the box [lo, hi], shape (count, n).

    Uses the Philox counter-based generator; row j depends only on
    ``(seed, j)`` because rows are drawn in order from one stream.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    u = gen.random((int(count), lo.size))
    return lo + (hi - lo) * u
