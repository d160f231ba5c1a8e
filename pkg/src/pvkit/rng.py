"""
Keyed random streams.

Every stream is a Philox (counter-based) generator whose key is derived from
a root seed plus a tuple of integer indices, e.g. ``(table_index,)`` or
``(drug_index, block_index)``. Streams never share state, so results do not
depend on how work is scheduled across threads.
"""

import numpy as np

__all__ = ["stream", "BLOCK_SIZE", "blocks"]

# Monte Carlo replicates are drawn in fixed-size blocks, one stream per block.
BLOCK_SIZE = 256


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def blocks(reps: int, block_size: int = BLOCK_SIZE):
    """Yield ``(block_index, start, stop)`` covering ``range(reps)``."""
    for b, start in enumerate(range(0, reps, block_size)):
        yield b, start, min(start + block_size, reps)
