"""Counter-based random streams.

Every draw is addressed by (seed, stream, block). The Philox key holds the
seed and stream id, and the block index sits in the top word of the 256-bit
counter, so blocks are disjoint and each one can be regenerated on its own
without replaying earlier ones.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np

INPUT_BLOCK = 4096


class Stream(IntEnum):
    INPUTS = 1
    INIT = 2
    TARGET = 3
    EVAL = 4
    KAPPA = 5
    LOSS = 6
    GRAD = 7
    AUX = 8


def generator(seed: int, stream: int, block: int = 0) -> np.random.Generator:
    """Generator for one (seed, stream, block) cell."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be in [0, 2^64)")
    if not 0 <= block < 2**64:
        raise ValueError("block must be in [0, 2^64)")
    key = (int(stream) << 64) | seed
    bitgen = np.random.Philox(key=key, counter=int(block) << 192)
    return np.random.Generator(bitgen)
