"""Counter-derived random streams.

Every component draws from ``stream(seed, name, *counters)`` so that one
master seed reproduces a whole run, and independent pieces of work (trial
chunks, topology draws, flow lists) never share a generator.
"""
import zlib

import numpy as np


def _label(name: str) -> int:
    return zlib.crc32(name.encode())


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, counters...)``."""
    return np.random.default_rng([int(seed), _label(name), *(int(c) for c in counters)])
