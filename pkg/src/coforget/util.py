"""Small shared helpers: seeded RNG streams and CSV float formatting."""

import zlib

import numpy as np


def rng_for(seed: int, tag: str) -> np.random.Generator:
    """Independent, reproducible generator for one purpose within a run.

    Streams are keyed by (seed, tag) so toggling one code path never shifts
    the random numbers another path consumes.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(tag.encode())]))


def fmt_float(x) -> str:
    """Shortest round-trip decimal form, locale independent."""
    return repr(float(x))
