"""Counter-based random streams.

Every draw is addressed by (seed, stream, chunk, block). A chunk always
draws a full ``chunk_size`` rows even when fewer paths are requested, so a
path's numbers depend only on the seed and its own index, never on the
total path count or on which worker simulated the chunk.
"""

from dataclasses import dataclass

import numpy as np

from app.config import config
from app.exceptions import ValidationError

STREAM_REGIME = 1
STREAM_BROWNIAN = 2
STREAM_DEFAULT = 3


@dataclass(frozen=True)
class Chunk:
    index: int
    start: int
    stop: int

    @property
    def rows(self) -> int:
        return self.stop - self.start


def check_seed(seed: int) -> int:
    if int(seed) != seed or seed < 0:
        raise ValidationError("seed must be a non-negative integer", {"seed": seed})
    return int(seed)


def chunk_generator(seed: int, stream: int, chunk: int, block: int = 0) -> np.random.Generator:
    """Philox generator for one (seed, stream, chunk, block) address."""
    sequence = np.random.SeedSequence(
        entropy=check_seed(seed), spawn_key=(stream, chunk, block)
    )
    return np.random.Generator(np.random.Philox(sequence))


def chunks(n_paths: int, chunk_size: int | None = None) -> list[Chunk]:
    """Split path indices [0, n_paths) into fixed-size chunks."""
    size = chunk_size or config.PATH_CHUNK
    return [
        Chunk(index=i, start=start, stop=min(start + size, n_paths))
        for i, start in enumerate(range(0, n_paths, size))
    ]
