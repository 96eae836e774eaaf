"""Derivation of independent, reproducible seeds from one root seed."""

import zlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """64-bit seed for the stream identified by ``(seed, *keys)``.

    String keys are hashed with CRC32 so the result is stable across
    interpreter runs (unlike ``hash``).
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k))
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
