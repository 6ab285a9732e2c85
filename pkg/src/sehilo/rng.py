"""Seeded random streams.

Every stochastic routine in the package takes an integer seed and builds its
own generator through :func:`make_rng`, so a seed fully determines the stream.
Sub-streams (per worker, per channel, per sweep row) use :func:`derive_seed`,
which is a plain XOR with the sub-stream index.
"""

import os

import numpy as np

MASK64 = (1 << 64) - 1
SEED_ENV_VAR = "SEHILO_SEED"
DEFAULT_SEED = 0


def make_rng(seed):
    """PCG64 generator for a 64-bit seed. The seed->stream map is frozen by a golden test."""
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


def derive_seed(seed, index):
    return (int(seed) ^ int(index)) & MASK64


def resolve_seed(seed=None):
    """Explicit seed, else ``$SEHILO_SEED``, else 0."""
    if seed is not None:
        return int(seed) & MASK64
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        try:
            return int(env, 0) & MASK64
        except ValueError:
            raise ValueError(f"{SEED_ENV_VAR}={env!r} is not an integer") from None
    return DEFAULT_SEED
