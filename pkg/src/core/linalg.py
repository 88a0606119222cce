"""
Numerical substrate: jittered Cholesky factorization, stable softplus and
multivariate normal sampling. All arithmetic is float64.
"""

import logging
import numpy as np
import torch
import torch.nn.functional as F
from scipy.linalg import lapack

from typing import Optional, Sequence, Union

from src.core.exceptions import InvalidArgumentError, NumericalFailureError
from src.core.rng import SeededRng

_logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
SYMMETRY_TOLERANCE = 1e-10

ArrayLike = Union[float, np.ndarray, torch.Tensor]


def softplus(x: ArrayLike) -> ArrayLike:
    """
    Numerically stable ``t -> ln(1 + e^t)``.

    Tensors go through ``torch.nn.functional.softplus`` so gradients flow;
    scalars and arrays use ``max(x, 0) + ln(1 + exp(-|x|))`` via ``np.logaddexp``.
    """
    if isinstance(x, torch.Tensor):
        return F.softplus(x)
    result = np.logaddexp(0.0, np.asarray(x, dtype=np.float64))
    return float(result) if np.ndim(result) == 0 else result


def softplus_inverse(y: ArrayLike) -> ArrayLike:
    """Inverse of :func:`softplus` for ``y > 0``."""
    if isinstance(y, torch.Tensor):
        return y + torch.log(-torch.expm1(-y))
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise InvalidArgumentError("softplus_inverse is only defined for positive values")
    result = y + np.log(-np.expm1(-y))
    return float(result) if np.ndim(result) == 0 else result


def _factorize(A: np.ndarray, jitter: float):
    shifted = A + jitter * np.eye(A.shape[0]) if jitter > 0 else A
    factor, info = lapack.dpotrf(shifted, lower=1, clean=1, overwrite_a=0)
    return np.tril(factor), int(info)


def cholesky(
    A: np.ndarray, jitter: float = 0.0, ladder: Sequence[float] = JITTER_LADDER
) -> np.ndarray:
    """
    Lower Cholesky factor of ``A + jitter * I``.

    When the factorization fails, the jitter escalates through the ladder
    entries that exceed the requested jitter before giving up.

    Args:
        A: Symmetric ``n x n`` matrix.
        jitter: Nonnegative diagonal shift tried first.
        ladder: Escalation values.

    Returns:
        np.ndarray: Lower-triangular ``L`` with ``L @ L.T == A + used_jitter * I``.

    Raises:
        InvalidArgumentError: If ``A`` is not square and symmetric or jitter < 0.
        NumericalFailureError: If ``A`` is not positive definite at the largest
            jitter; carries the failing pivot.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"Cholesky needs a square matrix, got shape {A.shape}")
    if jitter < 0:
        raise InvalidArgumentError(f"Jitter must be nonnegative, got {jitter}")
    if not np.all(np.isfinite(A)):
        raise InvalidArgumentError("Cholesky input contains non-finite entries")
    scale = max(float(np.max(np.abs(A))), np.finfo(float).tiny) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOLERANCE * scale:
        raise InvalidArgumentError("Cholesky input is not symmetric")

    attempts = [float(jitter)] + [j for j in ladder if j > jitter]
    info = 0
    for used in attempts:
        factor, info = _factorize(A, used)
        if info == 0:
            if used != jitter:
                _logger.warning(
                    "Cholesky needed jitter %.1e (requested %.1e) for a %d x %d matrix",
                    used,
                    jitter,
                    A.shape[0],
                    A.shape[0],
                )
            return factor
        _logger.debug("Cholesky failed at pivot %d with jitter %.1e", info, used)
    raise NumericalFailureError(
        f"Matrix is not positive definite (pivot {info - 1}) after jitter {attempts[-1]:.1e}",
        pivot=info - 1,
    )


def sample_mvn(
    mean: np.ndarray, L: np.ndarray, rng: SeededRng, size: Optional[int] = None
) -> np.ndarray:
    """
    Draw ``mean + L z`` with ``z`` i.i.d. standard normal.

    Args:
        mean: Length-``n`` mean vector.
        L: ``n x n`` lower-triangular factor.
        rng: Random stream.
        size: Number of draws; ``None`` returns a single vector.

    Returns:
        np.ndarray: ``(n,)`` or ``(size, n)`` draws.

    Raises:
        InvalidArgumentError: On shape mismatch.
    """
    mean = np.asarray(mean, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if mean.ndim != 1 or L.shape != (mean.size, mean.size):
        raise InvalidArgumentError(
            f"Mean of shape {mean.shape} does not conform with factor of shape {L.shape}"
        )
    if size is None:
        return mean + L @ rng.normal(mean.size)
    return mean + rng.normal((size, mean.size)) @ L.T
