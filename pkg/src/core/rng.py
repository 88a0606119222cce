"""
Seeded, splittable random number streams.

Every stochastic routine takes a ``SeededRng``. A stream is identified by a
64-bit seed and a stream id; children are derived with ``stream`` so that
replicate ``i`` (or chain ``i``) always maps to the same independent sequence.
"""

import logging
import numpy as np

from typing import Optional, Tuple, Union

from src.core.exceptions import InvalidArgumentError

_logger = logging.getLogger(__name__)

_U64 = 2**64

Shape = Union[int, Tuple[int, ...], None]


class SeededRng:
    """
    Counter-based (Philox) generator keyed by ``(seed, stream_id)``.

    The generator is not thread safe; give each thread its own stream.

    Attributes:
        seed (int): Root 64-bit seed.
        stream_id (int): Identifier of this stream below the root.
        draws (int): Number of draw calls served so far.
    """

    def __init__(self, seed: int, stream_id: int = 0, _path: Tuple[int, ...] = ()) -> None:
        if not 0 <= int(seed) < _U64:
            raise InvalidArgumentError(f"Seed must be an unsigned 64-bit integer, got {seed}")
        if not 0 <= int(stream_id) < _U64:
            raise InvalidArgumentError(
                f"Stream id must be an unsigned 64-bit integer, got {stream_id}"
            )
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = tuple(_path) + (self.stream_id,)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self._path)
        self._generator = np.random.Generator(np.random.Philox(sequence))
        self.draws = 0

    def stream(self, stream_id: int) -> "SeededRng":
        """Return the child stream ``stream_id`` below this one."""
        return SeededRng(self.seed, stream_id, _path=self._path)

    def normal(self, size: Shape = None) -> np.ndarray:
        """Standard normal draws as float64."""
        self.draws += 1
        return self._generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Shape = None) -> np.ndarray:
        """Uniform draws on ``[low, high)``."""
        self.draws += 1
        return self._generator.uniform(low, high, size)

    def choice(self, population: int, size: int, replace: bool = False) -> np.ndarray:
        """Indices drawn uniformly from ``range(population)``."""
        self.draws += 1
        return self._generator.choice(population, size=size, replace=replace)

    def integers(self, low: int, high: Optional[int] = None, size: Shape = None) -> np.ndarray:
        self.draws += 1
        return self._generator.integers(low, high, size)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, path={self._path})"
