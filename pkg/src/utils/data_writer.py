"""
Atomic writers for every file the toolkit produces.

Each write goes to a temporary file in the target directory and is moved into
place with ``os.replace``, so readers never observe a partial file.
"""

import logging
import os
import tempfile
import numpy as np
import pandas as pd
import yaml
from pathlib import Path

from typing import Any, Dict, Optional, Union

from src.core.exceptions import CheckpointIOError
from src.core.grid import Grid
from src.core.inference import PosteriorSamples
from src.utils.formats import Checkpoint, encode_posterior, encode_realisations

_logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class DataWriter:
    """
    Writes outputs below a root directory.

    Args:
        out_dir (str): Output directory, created on first write.

    Raises:
        CheckpointIOError: On any file system failure.
    """

    def __init__(self, out_dir: PathLike) -> None:
        self.out_dir = Path(out_dir)

    def path(self, name: PathLike) -> Path:
        path = Path(name)
        return path if path.is_absolute() else self.out_dir / path

    def write_bytes(self, name: PathLike, data: bytes) -> Path:
        """Atomically write ``data`` and return the final path."""
        target = self.path(name)
        tmp_name = None
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with tempfile.NamedTemporaryFile(
                dir=target.parent, prefix=f".{target.name}.", delete=False
            ) as handle:
                tmp_name = handle.name
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, target)
        except OSError as e:
            if tmp_name is not None and os.path.exists(tmp_name):
                os.unlink(tmp_name)
            _logger.error("Failed to write %s: %s", target, e)
            raise CheckpointIOError(f"Failed to write {target}: {e}") from e
        _logger.info("Wrote %s (%d bytes)", target, len(data))
        return target

    def write_frame(self, name: PathLike, df: pd.DataFrame) -> Path:
        return self.write_bytes(name, df.to_csv(index=False, lineterminator="\n").encode("utf-8"))

    def write_realisations(
        self,
        name: PathLike,
        values: np.ndarray,
        grid: Grid,
        log: bool = False,
        mean_field: Optional[np.ndarray] = None,
    ) -> Path:
        return self.write_bytes(name, encode_realisations(values, grid, log, mean_field))

    def write_checkpoint(self, name: PathLike, checkpoint: Checkpoint) -> Path:
        return self.write_bytes(name, checkpoint.encode())

    def write_posterior(self, name: PathLike, samples: PosteriorSamples) -> Path:
        return self.write_bytes(name, encode_posterior(samples))

    def write_yaml(self, name: PathLike, document: Dict[str, Any]) -> Path:
        return self.write_bytes(name, yaml.safe_dump(document, sort_keys=False).encode("utf-8"))
