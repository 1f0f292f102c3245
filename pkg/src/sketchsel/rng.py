"""Seeded random streams.

All randomness flows from numpy's Philox4x64 counter-based generator.  A
substream for a given purpose is keyed by a BLAKE2b hash of the master seed
and a tuple of tags, so independent consumers never share state and results
do not depend on call order.
"""
import hashlib

import numpy as np


def stream_key(seed, *tags):
    payload = repr((int(seed),) + tuple(tags)).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=16).digest(), "little")


def substream(seed, *tags):
    """Return a fresh ``np.random.Generator`` for ``(seed, *tags)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, *tags)))


def uniform(gen, size):
    return gen.random(size)


def standard_normal(gen, shape):
    """Standard normal draws by the Box-Muller transform.

    Pairs of uniforms are consumed in order, so the output is a pure function
    of the generator state and ``shape``.
    """
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    size = int(np.prod(shape))
    half = (size + 1) // 2
    u = gen.random((2, half))
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u in (0, 1]
    angle = 2.0 * np.pi * u[1]
    z = np.empty(2 * half)
    z[0::2] = radius * np.cos(angle)
    z[1::2] = radius * np.sin(angle)
    return z[:size].reshape(shape)


def weighted_without_replacement(gen, weights, p):
    """Draw ``p`` distinct indices, each draw proportional to the remaining weights.

    Once the positive weights are exhausted, the rest are drawn uniformly
    among the unselected indices.
    """
    w = np.array(weights, dtype=np.float64)
    n = w.size
    if p > n:
        raise ValueError(f"cannot draw {p} distinct indices out of {n}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    chosen = []
    taken = np.zeros(n, dtype=bool)
    for _ in range(p):
        total = w.sum()
        if total > 0:
            cdf = np.cumsum(w)
            j = int(np.searchsorted(cdf, gen.random() * total, side="right"))
            j = min(j, n - 1)
            while w[j] == 0:  # guards a draw landing on a float boundary
                j -= 1
        else:
            free = np.flatnonzero(~taken)
            j = int(free[int(gen.random() * free.size)])
        chosen.append(j)
        taken[j] = True
        w[j] = 0.0
    return chosen
