"""
Regular gridding of a rectangular spatial domain.

Locations are the cell centroids, ordered row-major over the axes: the last
axis varies fastest. Every field vector in the toolkit uses this order.
"""

import logging
import numpy as np

from dataclasses import dataclass, field
from typing import Sequence, Tuple

from src.core.exceptions import InvalidArgumentError

_logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Grid:
    """
    Ordered set of ``n`` cell centroids of a regular gridding.

    Attributes:
        bounds (Tuple[Tuple[float, float], ...]): Closed interval per axis.
        dims (Tuple[int, ...]): Cell count per axis.
        locations (np.ndarray): ``d x n`` matrix of centroids, row-major over axes.
    """

    bounds: Tuple[Tuple[float, float], ...]
    dims: Tuple[int, ...]
    locations: np.ndarray = field(repr=False)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    @property
    def points(self) -> np.ndarray:
        """Locations as an ``n x d`` array (one row per centroid)."""
        return self.locations.T

    @property
    def cell_widths(self) -> np.ndarray:
        return np.array([(hi - lo) / k for (lo, hi), k in zip(self.bounds, self.dims)])

    @property
    def half_diagonal(self) -> float:
        """Half the length of the domain diagonal, the default maximum lag."""
        return 0.5 * float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.bounds)))

    @property
    def grid_id(self) -> str:
        """Identifier binding field vectors to this grid."""
        axes = "x".join(f"[{lo!r},{hi!r}]" for lo, hi in self.bounds)
        cells = "x".join(str(k) for k in self.dims)
        return f"grid:{axes}:{cells}"

    def contains(self, point: Sequence[float]) -> bool:
        """Whether ``point`` lies in the closed domain."""
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.size != self.d:
            return False
        return all(lo <= p <= hi for p, (lo, hi) in zip(point, self.bounds))

    def index_of(self, point: Sequence[float]) -> int:
        """
        Snap a location to the nearest centroid.

        Args:
            point: Location inside the domain.

        Returns:
            int: Column index of the nearest centroid.

        Raises:
            InvalidArgumentError: If the location is outside the domain.
        """
        if not self.contains(point):
            raise InvalidArgumentError(f"Location {list(point)} is outside the domain {self.bounds}")
        point = np.asarray(point, dtype=float).reshape(-1)
        cell = [
            min(int((p - lo) // w), k - 1)
            for p, (lo, _), w, k in zip(point, self.bounds, self.cell_widths, self.dims)
        ]
        return int(np.ravel_multi_index(tuple(cell), self.dims))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.bounds == other.bounds and self.dims == other.dims

    def __hash__(self) -> int:
        return hash((self.bounds, self.dims))


def grid_locations(
    bounds: Sequence[Sequence[float]], dims: Sequence[int]
) -> Grid:
    """
    Build the centroid grid of a rectangular domain.

    The centroid of cell ``(i, j)`` is ``lower + (index + 0.5) * width`` on each
    axis and columns are ordered row-major (last axis fastest).

    Args:
        bounds: One ``(lower, upper)`` pair per axis.
        dims: Number of cells per axis.

    Returns:
        Grid: The centroid grid.

    Raises:
        InvalidArgumentError: For zero cells, mismatched axes, non-finite or
            inverted bounds.

    Example:
        >>> grid_locations([(-4, 4), (-4, 4)], (64, 64)).n
        4096
    """
    bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
    dims = tuple(int(k) for k in dims)
    if len(bounds) != len(dims) or len(dims) not in (1, 2):
        raise InvalidArgumentError(
            f"Expected 1 or 2 axes with matching bounds and dims, got {bounds} and {dims}"
        )
    for (lo, hi), k in zip(bounds, dims):
        if k < 1:
            raise InvalidArgumentError(f"Each axis needs at least one cell, got {dims}")
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
            raise InvalidArgumentError(f"Bounds must be finite with lower < upper, got {bounds}")

    axes = [lo + (np.arange(k) + 0.5) * ((hi - lo) / k) for (lo, hi), k in zip(bounds, dims)]
    mesh = np.meshgrid(*axes, indexing="ij")
    locations = np.stack([m.reshape(-1) for m in mesh], axis=0)
    locations.setflags(write=False)
    _logger.debug("Built grid with %d centroids over %s", locations.shape[1], bounds)
    return Grid(bounds=bounds, dims=dims, locations=locations)
