"""
Field vectors aligned to a grid.
"""

import numpy as np

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from src.core.exceptions import InvalidArgumentError
from src.core.grid import Grid


@dataclass(frozen=True, eq=False)
class FieldSample:
    """
    One process realisation evaluated on a grid.

    Attributes:
        values (np.ndarray): Length-``n`` vector in grid order.
        grid_id (str): Identifier of the grid the values belong to.
    """

    values: np.ndarray = field(repr=False)
    grid_id: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise InvalidArgumentError(f"A field sample is a vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Field sample contains non-finite values")
        object.__setattr__(self, "values", values)

    def check_grid(self, grid: Grid) -> None:
        if self.values.size != grid.n:
            raise InvalidArgumentError(
                f"Field of length {self.values.size} does not match grid with n={grid.n}"
            )


@dataclass(frozen=True, eq=False)
class FieldSampleSet:
    """
    ``N`` realisations on a common grid, stored as an ``N x n`` matrix.

    Attributes:
        values (np.ndarray): Realisations, one per row.
        grid_id (str): Identifier of the grid.
        mean_field (Optional[np.ndarray]): Mean field removed from (or to be
            added back to) the rows, when one is tracked.
    """

    values: np.ndarray = field(repr=False)
    grid_id: str
    mean_field: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidArgumentError(f"Expected an N x n matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Field samples contain non-finite values")
        object.__setattr__(self, "values", values)
        if self.mean_field is not None:
            mean_field = np.asarray(self.mean_field, dtype=np.float64)
            if mean_field.shape != (values.shape[1],):
                raise InvalidArgumentError(
                    f"Mean field of shape {mean_field.shape} does not match n={values.shape[1]}"
                )
            object.__setattr__(self, "mean_field", mean_field)

    @classmethod
    def stack(cls, samples: Sequence[FieldSample]) -> "FieldSampleSet":
        if not samples:
            raise InvalidArgumentError("Cannot stack an empty list of samples")
        grid_ids = {s.grid_id for s in samples}
        if len(grid_ids) != 1:
            raise InvalidArgumentError(f"Samples belong to different grids: {sorted(grid_ids)}")
        return cls(np.stack([s.values for s in samples]), samples[0].grid_id)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def check_grid(self, grid: Grid) -> None:
        if self.n != grid.n:
            raise InvalidArgumentError(
                f"Fields of length {self.n} do not match grid with n={grid.n}"
            )

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, index: int) -> FieldSample:
        return FieldSample(self.values[index], self.grid_id)

    def __iter__(self) -> Iterator[FieldSample]:
        for index in range(len(self)):
            yield self[index]
