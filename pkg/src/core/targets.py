"""
Target processes: covariograms, the non-stationary kernel-matrix covariance,
exact Gaussian and lognormal simulation, detrending, and ingestion of
externally simulated realisations.
"""

import logging
import numpy as np

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple, Union

from src.core.exceptions import InsufficientDataError, InvalidArgumentError
from src.core.fields import FieldSampleSet
from src.core.grid import Grid
from src.core.linalg import cholesky
from src.core.rng import SeededRng

_logger = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)
DEFAULT_JITTER = 0.0


class TargetKind(str, Enum):
    STATIONARY_SQEXP = "stationary-sqexp-gp"
    NONSTATIONARY_PACIOREK = "nonstationary-paciorek-gp"
    LOGNORMAL_MATERN32 = "lognormal-matern32"
    EXTERNAL = "external-realisations"

    @property
    def is_simulable(self) -> bool:
        return self is not TargetKind.EXTERNAL


@dataclass(frozen=True)
class TargetSpec:
    """
    Description of a target process.

    Attributes:
        kind (TargetKind): Which process.
        length_scale (float): Covariogram length scale, > 0.
        kappa (float): Scaling of the kernel matrices (non-stationary kind), >= 0.
        focal (Tuple[float, ...]): Focal point of the non-stationary kind.
        path (Optional[str]): Realisation file of the external kind.
    """

    kind: TargetKind = TargetKind.STATIONARY_SQEXP
    length_scale: float = 1.0
    kappa: float = 1.0
    focal: Tuple[float, ...] = (0.5, 1.0)
    path: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TargetKind(self.kind))
        object.__setattr__(self, "focal", tuple(float(v) for v in self.focal))
        if not self.length_scale > 0:
            raise InvalidArgumentError(f"Length scale must be positive, got {self.length_scale}")
        if not self.kappa >= 0:
            raise InvalidArgumentError(f"Kappa must be nonnegative, got {self.kappa}")
        if self.kind is TargetKind.EXTERNAL and not self.path:
            raise InvalidArgumentError("External realisations need a file path")


def _check_lag(h, length_scale: float) -> np.ndarray:
    if not length_scale > 0:
        raise InvalidArgumentError(f"Length scale must be positive, got {length_scale}")
    h = np.asarray(h, dtype=np.float64)
    if np.any(h < 0):
        raise InvalidArgumentError("Spatial lags must be nonnegative")
    return h


def _as_scalar(value: np.ndarray) -> Union[float, np.ndarray]:
    return float(value) if np.ndim(value) == 0 else value


def sqexp_covariogram(h, length_scale: float) -> Union[float, np.ndarray]:
    """Squared-exponential correlation ``exp(-h^2 / (2 l^2))``."""
    h = _check_lag(h, length_scale)
    return _as_scalar(np.exp(-(h**2) / (2.0 * length_scale**2)))


def matern32_covariogram(h, length_scale: float) -> Union[float, np.ndarray]:
    """Matérn correlation with smoothness 3/2: ``(1 + sqrt3 h / l) exp(-sqrt3 h / l)``."""
    h = _check_lag(h, length_scale)
    scaled = SQRT3 * h / length_scale
    return _as_scalar((1.0 + scaled) * np.exp(-scaled))


def _pairwise_sq_distance(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    # Accumulated per axis so that every entry is computed by the same
    # arithmetic whatever the batch shape.
    total = np.zeros((X1.shape[0], X2.shape[0]))
    for axis in range(X1.shape[1]):
        diff = X1[:, axis][:, None] - X2[:, axis][None, :]
        total += diff * diff
    return total


def _paciorek_matrix(
    X1: np.ndarray, X2: np.ndarray, kappa: float, focal: np.ndarray, length_scale: float
) -> np.ndarray:
    # Kernel matrices are exp(kappa ||s - focal||) I, so every determinant
    # reduces to a scalar power, evaluated here in log space.
    d = X1.shape[1]
    log_a = kappa * np.sqrt(_pairwise_sq_distance(X1, focal[None, :]))[:, 0][:, None]
    log_b = kappa * np.sqrt(_pairwise_sq_distance(X2, focal[None, :]))[:, 0][None, :]
    larger = np.maximum(log_a, log_b)
    gap = np.abs(log_a - log_b)
    log_half_sum = larger + np.log1p(np.expm1(-gap) / 2.0)
    log_prefactor = (d / 4.0) * (log_a + log_b) - (d / 2.0) * log_half_sum
    mahalanobis_sq = _pairwise_sq_distance(X1, X2) * np.exp(-log_half_sum)
    return np.exp(log_prefactor) * np.exp(-mahalanobis_sq / (2.0 * length_scale**2))


def paciorek_cov(s, r, kappa: float, focal, length_scale: float) -> float:
    """
    Non-stationary covariance built from location-dependent kernel matrices.

    ``C(s, r) = |S(s)|^1/4 |S(r)|^1/4 |(S(s) + S(r)) / 2|^-1/2 C0(sqrt Q(s, r))``
    with ``S(s) = exp(kappa ||s - focal||) I``, ``Q`` the inter-point Mahalanobis
    distance under ``(S(s) + S(r)) / 2`` and ``C0`` the squared-exponential
    covariogram.

    Args:
        s, r: Locations.
        kappa: Kernel matrix scaling, >= 0.
        focal: Point where the kernel matrix is the identity.
        length_scale: Length scale of ``C0``.

    Returns:
        float: The covariance, exactly 1 when ``s == r``.
    """
    if not length_scale > 0:
        raise InvalidArgumentError(f"Length scale must be positive, got {length_scale}")
    if kappa < 0:
        raise InvalidArgumentError(f"Kappa must be nonnegative, got {kappa}")
    s = np.asarray(s, dtype=np.float64).reshape(1, -1)
    r = np.asarray(r, dtype=np.float64).reshape(1, -1)
    focal = np.asarray(focal, dtype=np.float64).reshape(-1)
    return float(_paciorek_matrix(s, r, kappa, focal, length_scale)[0, 0])


def cross_covariance(X1: np.ndarray, X2: np.ndarray, spec: TargetSpec) -> np.ndarray:
    """
    Covariance between the Gaussian process values at two location sets.

    For the lognormal kind this is the covariance of the underlying Gaussian.

    Args:
        X1: ``n1 x d`` locations.
        X2: ``n2 x d`` locations.
        spec: Gaussian-based target.

    Returns:
        np.ndarray: ``n1 x n2`` covariance matrix.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    if spec.kind is TargetKind.STATIONARY_SQEXP:
        return sqexp_covariogram(np.sqrt(_pairwise_sq_distance(X1, X2)), spec.length_scale)
    if spec.kind is TargetKind.LOGNORMAL_MATERN32:
        return matern32_covariogram(np.sqrt(_pairwise_sq_distance(X1, X2)), spec.length_scale)
    if spec.kind is TargetKind.NONSTATIONARY_PACIOREK:
        focal = np.asarray(spec.focal, dtype=np.float64)
        if focal.size != X1.shape[1]:
            raise InvalidArgumentError(
                f"Focal point {spec.focal} does not match spatial dimension {X1.shape[1]}"
            )
        return _paciorek_matrix(X1, X2, spec.kappa, focal, spec.length_scale)
    raise InvalidArgumentError(f"No covariance function for target kind '{spec.kind.value}'")


def build_covariance(grid: Grid, spec: TargetSpec) -> np.ndarray:
    """
    Covariance matrix of the target process over the grid centroids.

    Raises:
        InvalidArgumentError: For the external kind or a focal point outside
            the domain.
    """
    if spec.kind is TargetKind.NONSTATIONARY_PACIOREK and not grid.contains(spec.focal):
        raise InvalidArgumentError(f"Focal point {spec.focal} is outside the domain {grid.bounds}")
    sigma = cross_covariance(grid.points, grid.points, spec)
    _logger.debug("Built %d x %d covariance for %s", grid.n, grid.n, spec.kind.value)
    return sigma


def simulate_target(
    spec: TargetSpec, grid: Grid, N: int, rng: SeededRng, jitter: float = DEFAULT_JITTER
) -> FieldSampleSet:
    """
    Draw ``N`` realisations of the target process on the grid.

    Gaussian kinds are mean-zero draws with covariance ``build_covariance``;
    the lognormal kind exponentiates a Matérn-3/2 Gaussian draw; the external
    kind returns the first ``N`` realisations of its file.

    Raises:
        InvalidArgumentError: If ``N < 1``.
        InsufficientDataError: If an external file holds fewer than ``N`` fields.
        NumericalFailureError: If the covariance cannot be factorized.
    """
    if N < 1:
        raise InvalidArgumentError(f"Need at least one realisation, got N={N}")
    if spec.kind is TargetKind.EXTERNAL:
        samples, file_grid = load_external_realisations(spec.path)
        if file_grid != grid:
            raise InvalidArgumentError(f"Realisations in {spec.path} are not on the requested grid")
        if len(samples) < N:
            raise InsufficientDataError(
                f"{spec.path} holds {len(samples)} realisations but {N} were requested",
                available=len(samples),
                requested=N,
            )
        return FieldSampleSet(samples.values[:N], grid.grid_id)
    factor = cholesky(build_covariance(grid, spec), jitter=jitter)
    return FieldSampleSet(_draw_gaussian(factor, spec, N, rng), grid.grid_id)


def _draw_gaussian(factor: np.ndarray, spec: TargetSpec, N: int, rng: SeededRng) -> np.ndarray:
    draws = rng.normal((N, factor.shape[0])) @ factor.T
    if spec.kind is TargetKind.LOGNORMAL_MATERN32:
        return np.exp(draws)
    return draws


def center_realisations(samples: Union[FieldSampleSet, np.ndarray]) -> Tuple[FieldSampleSet, np.ndarray]:
    """
    Remove the per-location empirical mean.

    Args:
        samples: At least two realisations on a common grid.

    Returns:
        Tuple[FieldSampleSet, np.ndarray]: The centered realisations (carrying
        the mean field) and the mean field itself.

    Raises:
        InvalidArgumentError: With fewer than two realisations.
    """
    if not isinstance(samples, FieldSampleSet):
        samples = FieldSampleSet(np.asarray(samples, dtype=np.float64), "")
    if len(samples) < 2:
        raise InvalidArgumentError("Centering needs at least two realisations")
    mean_field = samples.values.mean(axis=0)
    centered = samples.values - mean_field
    return FieldSampleSet(centered, samples.grid_id, mean_field=mean_field), mean_field


def load_external_realisations(path: Union[str, Path]) -> Tuple[FieldSampleSet, Grid]:
    """
    Read externally simulated realisations (e.g. max-stable fields).

    The elementwise log requested by the file header is applied on load.

    Raises:
        FormatError: On a malformed header, short records or non-finite values.
    """
    realisations = _read_external(path)
    return realisations.samples, realisations.grid


def _read_external(path: Union[str, Path]):
    from src.utils.data_reader import DataReader

    realisations = DataReader(path).load_data()
    _logger.info("Loaded %d external realisations from %s", len(realisations.samples), path)
    return realisations


class TargetSource:
    """
    Supplier of target batches during calibration.

    Simulable kinds keep the Cholesky factor and draw fresh fields on every
    call; the external kind resamples its pool without replacement. With
    ``center=True`` the empirical mean field (estimated once from the pool or
    from ``pilot_size`` simulated fields) is removed from every batch and kept
    in ``mean_field``. ``log_scale`` tells whether the batches are the log of
    the data, as for external files with the log flag.

    Args:
        spec: Target description.
        grid: Calibration grid.
        center: Whether batches are detrended.
        rng: Stream for the pilot simulation used to estimate the mean field.
        pilot_size: Number of pilot draws for the simulated mean field.
    """

    def __init__(
        self,
        spec: TargetSpec,
        grid: Grid,
        center: bool = False,
        rng: Optional[SeededRng] = None,
        pilot_size: int = 4096,
        jitter: float = DEFAULT_JITTER,
    ) -> None:
        self.spec = spec
        self.grid = grid
        self.center = center
        self.mean_field: Optional[np.ndarray] = None
        self.log_scale = False
        self._factor: Optional[np.ndarray] = None
        self._pool: Optional[np.ndarray] = None

        if spec.kind is TargetKind.EXTERNAL:
            realisations = _read_external(spec.path)
            if realisations.grid != grid:
                raise InvalidArgumentError(f"Realisations in {spec.path} are not on the calibration grid")
            self._pool = realisations.samples.values
            self.log_scale = realisations.log
        else:
            self._factor = cholesky(build_covariance(grid, spec), jitter=jitter)

        if center:
            if self._pool is not None:
                _, self.mean_field = center_realisations(self._pool)
            else:
                pilot_rng = rng if rng is not None else SeededRng(0)
                pilot = _draw_gaussian(self._factor, spec, pilot_size, pilot_rng)
                _, self.mean_field = center_realisations(pilot)
            _logger.info("Target batches are centered on an empirical mean field")

    def draw(self, N: int, rng: SeededRng) -> np.ndarray:
        """
        A fresh ``N x n`` batch of target realisations.

        Raises:
            InsufficientDataError: If the external pool is smaller than ``N``.
        """
        if self._pool is not None:
            if self._pool.shape[0] < N:
                raise InsufficientDataError(
                    f"Only {self._pool.shape[0]} realisations available but batches need {N}",
                    available=self._pool.shape[0],
                    requested=N,
                )
            batch = self._pool[np.sort(rng.choice(self._pool.shape[0], N, replace=False))]
        else:
            batch = _draw_gaussian(self._factor, self.spec, N, rng)
        if self.mean_field is not None:
            batch = batch - self.mean_field
        return batch
