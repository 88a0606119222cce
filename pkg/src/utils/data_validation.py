"""
Validation of observation tables and summaries of realisation sets.
"""

# Importing necessary libraries and modules
import logging
import numpy as np
import pandas as pd

from dataclasses import dataclass
from typing import Any, Dict, List

from src.core.exceptions import FormatError
from src.core.fields import FieldSampleSet

# Set up logging
_logger = logging.getLogger(__name__)

COORDINATE_COLUMNS = ("s1", "s2")


class DataValidation:
    """
    Checks on an observation table with columns ``s1[,s2],value``.

    Every failed check raises ``FormatError`` carrying the zero-based index of
    the first offending record.
    """

    def __init__(self, df: pd.DataFrame):
        """
        Initializes the DataValidation class with a Pandas DataFrame.

        :param df: The table to be validated.
        """
        self.df = df

    def check_columns(self) -> List[str]:
        """
        Checks that the table has one or two coordinate columns and a value column.

        :return: The coordinate column names in order.
        """
        columns = [c.strip() for c in self.df.columns]
        self.df.columns = columns
        coordinates = [c for c in COORDINATE_COLUMNS if c in columns]
        if "value" not in columns or coordinates not in (["s1"], ["s1", "s2"]):
            raise FormatError(f"Expected columns s1[,s2],value, found {columns}")
        extra = set(columns) - set(coordinates) - {"value"}
        if extra:
            _logger.warning("Ignoring unexpected columns %s", sorted(extra))
        return coordinates

    def check_records(self) -> None:
        """Checks that every coordinate and value is a finite number."""
        numeric = self.df.apply(pd.to_numeric, errors="coerce")
        bad = ~np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
        if bad.any():
            record = int(np.flatnonzero(bad)[0])
            raise FormatError(f"Record {record} is missing or not numeric", record=record)
        self.df = numeric
        _logger.info("Record check completed for %d observations.", len(self.df))

    def check_duplicates(self, coordinates: List[str]) -> int:
        """
        Counts repeated observation sites; repeats are allowed but reported.

        :return: The number of duplicated sites.
        """
        duplicate_count = int(self.df.duplicated(subset=coordinates).sum())
        if duplicate_count:
            _logger.warning("Found %d repeated observation sites", duplicate_count)
        return duplicate_count

    def check_positive(self) -> None:
        """Checks that every value is positive, as the log transform needs."""
        bad = np.flatnonzero(self.df["value"].to_numpy(dtype=np.float64) <= 0)
        if bad.size:
            raise FormatError(f"Record {bad[0]} is not positive", record=int(bad[0]))

    @classmethod
    def generate_summary(cls, df: pd.DataFrame, positive: bool = False) -> Dict[str, Any]:
        """
        Runs every check and reports the counts.

        :param df: The table to be validated.
        :param positive: Also require positive values.
        :return: Coordinate columns, record count, duplicated sites and the
            validated numeric table.
        """
        validator = cls(df)
        coordinates = validator.check_columns()
        validator.check_records()
        duplicate_sites = validator.check_duplicates(coordinates)
        if positive:
            validator.check_positive()
        summary = {
            "coordinates": coordinates,
            "records": len(validator.df),
            "duplicate_sites": duplicate_sites,
            "table": validator.df,
        }
        _logger.info(
            "Data validation summary: %d records, %d repeated sites", summary["records"], duplicate_sites
        )
        return summary


@dataclass(frozen=True)
class RealisationSummary:
    """
    Per-location mean and variance of a realisation set with the overall range.

    Attributes:
        count (int): Number of realisations.
        mean (np.ndarray): Per-location mean.
        variance (np.ndarray): Per-location variance (``ddof=1``, 0 for one realisation).
        minimum (float): Smallest value.
        maximum (float): Largest value.
    """

    count: int
    mean: np.ndarray
    variance: np.ndarray
    minimum: float
    maximum: float

    @classmethod
    def from_samples(cls, samples: FieldSampleSet) -> "RealisationSummary":
        values = samples.values
        ddof = 1 if values.shape[0] > 1 else 0
        return cls(
            count=values.shape[0],
            mean=values.mean(axis=0),
            variance=values.var(axis=0, ddof=ddof),
            minimum=float(values.min()),
            maximum=float(values.max()),
        )

    def describe(self) -> pd.DataFrame:
        """Distribution over locations of the per-location mean and variance."""
        return pd.DataFrame({"mean": self.mean, "variance": self.variance}).describe()

    def render(self) -> str:
        header = f"{self.count} realisations, values in [{self.minimum:.4f}, {self.maximum:.4f}]"
        return f"{header}\n{self.describe().to_string()}"
