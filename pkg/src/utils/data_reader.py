"""
Loading of the files the toolkit consumes: observation datasets and truth
tables (CSV), realisation files, checkpoints and posterior draws.
"""

# Importing necessary libraries and modules
import logging
import numpy as np
import pandas as pd
from pathlib import Path

from typing import Optional, Union

from src.core.exceptions import CheckpointIOError, FormatError
from src.core.inference import Dataset, PosteriorSamples
from src.utils.data_validation import DataValidation
from src.utils.formats import Checkpoint, Realisations, decode_posterior, decode_realisations

# Set up logging
_logger = logging.getLogger(__name__)

Loaded = Union[pd.DataFrame, Realisations, Checkpoint, PosteriorSamples]


class DataReader:
    """
    File loader with format detection by suffix.

    Features:
    - CSV tables (observation datasets ``s1[,s2],value`` and truth values)
    - Realisation files (``.sbr``), checkpoints (``.ckpt``) and posterior
      draws (``.post``)
    - Library errors surface as ``FormatError`` or ``CheckpointIOError``

    Args:
        data_path (str): Path to the file.

    Raises:
        CheckpointIOError: If the path does not exist or is not a file.
        FormatError: For unsupported suffixes.

    Examples:
    ```python
    reader = DataReader("out/realisations.sbr")
    realisations = reader.load_data()
    print(realisations.samples.values.shape)

    dataset = DataReader("data/observations.csv").load_dataset(noise_var=0.001)
    ```
    """

    SUPPORTED_FORMATS = {"csv", "sbr", "ckpt", "post"}

    def __init__(self, data_path: Union[str, Path]) -> None:
        self.data_path = Path(data_path)
        self._file_type = self._get_file_type()
        self._validate_path(self.data_path)
        _logger.debug("Initialized DataReader for %s (Type: %s)", self.data_path, self._file_type)

    def _validate_path(self, path: Path) -> None:
        """Validate data path exists and is accessible"""
        if not path.exists():
            _logger.error("Path not found: %s", path)
            raise CheckpointIOError(f"Data file not found: {path}")
        if not path.is_file():
            _logger.error("Path is not a file: %s", path)
            raise CheckpointIOError(f"Not a file: {path}")

    def _get_file_type(self) -> str:
        """
        Detect file type using path suffix with validation.

        Returns:
            str: Lowercase file extension without dot

        Raises:
            FormatError: For unsupported file formats
        """
        suffix = self.data_path.suffix.lower()[1:]
        if suffix not in self.SUPPORTED_FORMATS:
            _logger.error("Unsupported file format: %s", suffix)
            raise FormatError(f"Unsupported format: {suffix}. Supported: {sorted(self.SUPPORTED_FORMATS)}")
        return suffix

    def load_data(self) -> Loaded:
        """
        Load the file according to its format.

        Returns:
            Loaded: A DataFrame for CSV, otherwise the decoded file contents.

        Raises:
            FormatError: If the contents are malformed.
            CheckpointIOError: If the file cannot be read.
        """
        _logger.info("Loading data from %s", self.data_path)
        if self._file_type == "csv":
            return self._load_csv()
        data = self._read_bytes()
        if self._file_type == "sbr":
            return decode_realisations(data)
        if self._file_type == "ckpt":
            return Checkpoint.decode(data)
        return decode_posterior(data)

    def _read_bytes(self) -> bytes:
        try:
            return self.data_path.read_bytes()
        except OSError as e:
            _logger.error("Failed to read %s: %s", self.data_path, e)
            raise CheckpointIOError(f"Failed to read {self.data_path}: {e}") from e

    def _load_csv(self) -> pd.DataFrame:
        """
        Load a CSV table.

        Raises:
            FormatError: If the file cannot be parsed.
        """
        try:
            df = pd.read_csv(self.data_path)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            _logger.error("CSV parsing error: %s", e)
            raise FormatError(f"CSV parsing error in {self.data_path}: {e}") from e
        except OSError as e:
            raise CheckpointIOError(f"Failed to read {self.data_path}: {e}") from e
        if df.empty:
            _logger.warning("Loaded empty table from %s", self.data_path)
        return df

    def load_dataset(self, noise_var: float, transform: str = "identity") -> Dataset:
        """
        Load an observation dataset with columns ``s1[,s2],value``.

        Raises:
            FormatError: With the index of the first malformed record.
        """
        summary = DataValidation.generate_summary(self._expect("csv"), positive=transform == "log")
        coordinates, df = summary["coordinates"], summary["table"]
        return Dataset(df[coordinates].to_numpy(np.float64), df["value"].to_numpy(np.float64), noise_var, transform)

    def load_realisations(self) -> Realisations:
        return self._expect("sbr")

    def load_checkpoint(self) -> Checkpoint:
        return self._expect("ckpt")

    def load_posterior(self) -> PosteriorSamples:
        return self._expect("post")

    def _expect(self, file_type: str):
        if self._file_type != file_type:
            raise FormatError(f"Expected a .{file_type} file, got {self.data_path.name}")
        return self.load_data()

    @property
    def detected_format(self) -> str:
        """
        Property to get the detected file format.

        Returns:
            str: The file type detected during initialization.
        """
        return self._file_type

