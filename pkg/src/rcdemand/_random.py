"""Seeded substreams and low-discrepancy draws.

Random numbers are produced in fixed-size chunks, each from its own
``SeedSequence(seed, spawn_key=(stream, chunk))``. The n-th draw therefore
depends only on (seed, stream, n), never on how work is split.
"""

import numpy as np
from scipy.stats import qmc

CHUNK = 65536

# stream identifiers
COEFFICIENTS = 1
TASTE_SHOCKS = 2
PANEL = 3
STARTS = 4


def chunk_generator(seed, stream, chunk):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(chunk)))
    return np.random.Generator(np.random.PCG64(ss))


def chunked(seed, stream, n, width, sampler):
    """Stack ``sampler(rng, size, width)`` over consecutive chunks."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    parts = []
    for c, start in enumerate(range(0, n, CHUNK)):
        size = min(CHUNK, n - start)
        parts.append(sampler(chunk_generator(seed, stream, c), size, width))
    if not parts:
        return np.empty((0, width))
    return np.concatenate(parts, axis=0)


def standard_normal(seed, stream, n, width):
    return chunked(seed, stream, n, width, lambda g, m, d: g.standard_normal((m, d)))


def uniform(seed, stream, n, width):
    return chunked(seed, stream, n, width, lambda g, m, d: g.random((m, d)))


def halton(seed, n, width):
    """Scrambled Halton points in (0, 1)^width."""
    pts = qmc.Halton(d=width, scramble=True, seed=int(seed)).random(n)
    return np.clip(pts, 1e-12, 1 - 1e-12)


def gumbel_from_uniform(u):
    return -np.log(-np.log(u))
