"""Seeded random streams keyed by ``(seed, stream)``.

Each draw is a pure function of the seed, the stream id and the position in
the returned vector, so results never depend on traversal order.
"""
import numpy as np


def _generator(seed, stream):
    key = np.random.SeedSequence([int(seed), int(stream)]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform(seed, n, stream=0):
    """``n`` doubles in ``[0, 1)`` built from 53 random mantissa bits."""
    return _generator(seed, stream).random(n)


def standard_normal(seed, n, stream=0):
    """Standard normal samples via the Box-Muller transform."""
    m = (n + 1) // 2
    u = uniform(seed, 2 * m, stream)
    radius = np.sqrt(-2.0 * np.log1p(-u[:m]))
    angle = 2.0 * np.pi * u[m:]
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:n]
