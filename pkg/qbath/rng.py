"""
Counter-based random streams keyed by (seed, shot, slot).
"""

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import ConfigValidationError

MAX_SEED = 2 ** 64 - 1
SHOT_BLOCK = 256
# Key of the stream that draws schedule settings; shot blocks never reach it
SCHEDULE_STREAM = 2 ** 63


class CounterRNG:
    """Philox streams addressed by a (shot, slot) counter instead of draw order

    Shots are numbered globally and grouped in fixed blocks of SHOT_BLOCK; each
    (block, slot) pair is one Philox key and the shot's offset in its block is
    the position within the draw. A shot's numbers therefore do not depend on
    how the shots are split between workers or chunks.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed <= MAX_SEED:
            raise ConfigValidationError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed

    def generator(self, stream: int, slot: int) -> Generator:
        return Generator(Philox(SeedSequence([self.seed, int(stream), int(slot)])))

    def uniforms(self, stream: int, slot: int, size: int) -> np.ndarray:
        return self.generator(stream, slot).random(size)

    def shot_uniforms(self, slot: int, start: int, n: int) -> np.ndarray:
        """One uniform per shot in [start, start + n) at this slot"""
        if n <= 0:
            return np.empty(0)
        first, last = start // SHOT_BLOCK, (start + n - 1) // SHOT_BLOCK
        draws = np.concatenate([self.uniforms(block, slot, SHOT_BLOCK) for block in range(first, last + 1)])
        offset = start - first * SHOT_BLOCK
        return draws[offset:offset + n]

    def __repr__(self) -> str:
        return f"CounterRNG(seed={self.seed})"
