"""
Domain errors raised across the SBNN toolkit.

Library failures (LAPACK, pandas, PyYAML, the file system) are caught at the
module boundary and re-raised as one of these with ``from e`` so callers and the
command line only ever deal with this hierarchy.
"""

from typing import Optional


class SBNNError(Exception):
    """Base class for every error raised by the toolkit"""

    pass


class InvalidArgumentError(SBNNError, ValueError):
    """Raised when an argument violates a documented precondition"""

    pass


class ConfigError(SBNNError):
    """Raised when a run configuration cannot be parsed or validated"""

    pass


class NumericalFailureError(SBNNError):
    """
    Raised when a numerical routine cannot produce a finite result.

    Attributes:
        pivot (Optional[int]): Failing pivot of a Cholesky factorization.
        step (Optional[int]): Optimizer step at which the failure happened.
        chain (Optional[int]): MCMC chain index.
        iteration (Optional[int]): MCMC iteration index.
    """

    def __init__(
        self,
        message: str,
        pivot: Optional[int] = None,
        step: Optional[int] = None,
        chain: Optional[int] = None,
        iteration: Optional[int] = None,
    ) -> None:
        super().__init__(message)
        self.pivot = pivot
        self.step = step
        self.chain = chain
        self.iteration = iteration


class InsufficientDataError(SBNNError):
    """Raised when fewer realisations are available than were requested"""

    def __init__(self, message: str, available: int = 0, requested: int = 0) -> None:
        super().__init__(message)
        self.available = available
        self.requested = requested


class FormatError(SBNNError):
    """
    Raised when a realisation, checkpoint, posterior or dataset file is malformed.

    Attributes:
        record (Optional[int]): Zero-based record (or CSV row) index at fault.
        line (Optional[int]): One-based header line at fault.
    """

    def __init__(
        self, message: str, record: Optional[int] = None, line: Optional[int] = None
    ) -> None:
        super().__init__(message)
        self.record = record
        self.line = line


class UnsupportedVariantError(SBNNError):
    """Raised when an operation is requested for a model variant it does not support"""

    pass


class CheckpointIOError(SBNNError, OSError):
    """Raised when an output file cannot be written"""

    pass
