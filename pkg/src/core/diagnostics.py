"""
Empirical comparisons of field realisations: binned covariograms, anchored
covariance maps, kernel density estimates and conditional exceedance curves.

Pairwise statistics enumerate location pairs ``i <= j`` when there are at most
``max_pairs`` of them and otherwise use a seeded uniform subsample.
"""

import logging
import numpy as np
import pandas as pd

from dataclasses import dataclass
from scipy.stats import gaussian_kde
from typing import List, Optional, Sequence, Tuple, Union

from src.core.exceptions import InsufficientDataError, InvalidArgumentError
from src.core.fields import FieldSampleSet
from src.core.grid import Grid
from src.core.rng import SeededRng

_logger = logging.getLogger(__name__)

DEFAULT_MAX_PAIRS = 200_000
DEFAULT_QUANTILES = (0.95, 0.98, 0.99, 0.995)
MIN_KDE_SAMPLES = 10
_PAIR_CHUNK = 2048

Samples = Union[FieldSampleSet, np.ndarray]


def _values(samples: Samples, grid: Optional[Grid] = None) -> np.ndarray:
    if isinstance(samples, FieldSampleSet):
        if grid is not None:
            samples.check_grid(grid)
        values = samples.values
    else:
        values = np.asarray(samples, dtype=np.float64)
    if values.ndim != 2:
        raise InvalidArgumentError(f"Expected an N x n array of realisations, got shape {values.shape}")
    if grid is not None and values.shape[1] != grid.n:
        raise InvalidArgumentError(f"Realisations have {values.shape[1]} locations, the grid has {grid.n}")
    return values


def _centered(values: np.ndarray) -> np.ndarray:
    if values.shape[0] < 2:
        raise InvalidArgumentError(f"Need at least 2 realisations, got {values.shape[0]}")
    # Shift by the first replicate so identical replicates give exact zeros.
    shifted = values - values[0]
    return shifted - shifted.mean(axis=0)


def _location_pairs(
    n: int, max_pairs: int, rng: Optional[SeededRng], include_diagonal: bool
) -> Tuple[np.ndarray, np.ndarray]:
    I, J = np.triu_indices(n, k=0 if include_diagonal else 1)
    if I.size <= max_pairs:
        return I, J
    rng = rng if rng is not None else SeededRng(0)
    keep = np.sort(rng.choice(I.size, max_pairs, replace=False))
    _logger.info("Subsampled %d of %d location pairs", max_pairs, I.size)
    return I[keep], J[keep]


def _pair_sums(A: np.ndarray, B: np.ndarray, I: np.ndarray, J: np.ndarray) -> np.ndarray:
    """``sum_r A[r, I_p] * B[r, J_p]`` for every pair ``p``."""
    out = np.empty(I.size)
    for start in range(0, I.size, _PAIR_CHUNK):
        stop = start + _PAIR_CHUNK
        out[start:stop] = np.einsum("rp,rp->p", A[:, I[start:stop]], B[:, J[start:stop]])
    return out


def _lag_bins(grid: Grid, I: np.ndarray, J: np.ndarray, n_bins: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Bin index of every pair for ``n_bins`` equal-width bins on
    ``[0, half_diagonal]``, -1 beyond. The last bin is closed on the right.
    """
    if n_bins < 1:
        raise InvalidArgumentError(f"Need at least one lag bin, got {n_bins}")
    points = grid.points
    lags = np.linalg.norm(points[I] - points[J], axis=1)
    width = grid.half_diagonal / n_bins
    index = np.minimum((lags // width).astype(int), n_bins - 1)
    index[lags > grid.half_diagonal] = -1
    centers = (np.arange(n_bins) + 0.5) * width
    return index, lags, centers


@dataclass(frozen=True)
class CovariogramEstimate:
    """
    Binned covariogram with one entry per lag bin. Bins without pairs have a
    count of 0 and NaN estimates. The first bin holds the pairs ``(i, i)`` along
    with any lag shorter than the bin width.

    Attributes:
        bin_centers (np.ndarray): Midpoint of each bin.
        mean_lags (np.ndarray): Average pair lag inside each bin.
        estimates (np.ndarray): Average covariance of the pairs in each bin.
        counts (np.ndarray): Pairs per bin.
    """

    bin_centers: np.ndarray
    mean_lags: np.ndarray
    estimates: np.ndarray
    counts: np.ndarray

    @property
    def filled(self) -> np.ndarray:
        """Mask of the bins holding at least one pair."""
        return self.counts > 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lag": self.bin_centers, "estimate": self.estimates, "count": self.counts})


def empirical_covariogram(
    samples: Samples,
    grid: Grid,
    n_bins: int = 20,
    max_pairs: int = DEFAULT_MAX_PAIRS,
    rng: Optional[SeededRng] = None,
) -> CovariogramEstimate:
    """
    Covariance across replicates of every location pair, averaged per lag bin.

    Raises:
        InvalidArgumentError: If fewer than 2 realisations are given.
    """
    centered = _centered(_values(samples, grid))
    I, J = _location_pairs(grid.n, max_pairs, rng, include_diagonal=True)
    covariances = _pair_sums(centered, centered, I, J) / (centered.shape[0] - 1)
    index, lags, centers = _lag_bins(grid, I, J, n_bins)

    inside = index >= 0
    counts = np.bincount(index[inside], minlength=n_bins)
    totals = np.bincount(index[inside], weights=covariances[inside], minlength=n_bins)
    lag_totals = np.bincount(index[inside], weights=lags[inside], minlength=n_bins)
    with np.errstate(divide="ignore", invalid="ignore"):
        estimates = np.where(counts > 0, totals / counts, np.nan)
        mean_lags = np.where(counts > 0, lag_totals / counts, np.nan)
    empty = int(np.sum(counts == 0))
    if empty:
        _logger.info("%d of %d covariogram bins hold no pairs", empty, n_bins)
    return CovariogramEstimate(bin_centers=centers, mean_lags=mean_lags, estimates=estimates, counts=counts)


@dataclass(frozen=True)
class AnchoredMaps:
    """
    Empirical covariance (or correlation) between each anchor and every location.

    Attributes:
        anchor_indices (np.ndarray): Grid index each anchor snapped to.
        values (np.ndarray): ``A x n`` maps.
    """

    anchor_indices: np.ndarray
    values: np.ndarray

    def to_frame(self, grid: Grid, column: str = "cov") -> pd.DataFrame:
        frames = []
        for anchor_id, row in enumerate(self.values):
            frame = pd.DataFrame({"anchor_id": np.full(grid.n, anchor_id)})
            for axis in range(grid.d):
                frame[f"s{axis + 1}"] = grid.locations[axis]
            frame[column] = row
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)


def anchored_covariance(
    samples: Samples, grid: Grid, anchors: Sequence[Sequence[float]], correlation: bool = False
) -> AnchoredMaps:
    """
    ``cov(Y(anchor), Y(s_j))`` for all ``j``, per anchor, with anchors snapped
    to the nearest centroid.

    Args:
        correlation: Divide by the standard deviations (zero-variance
            locations give 0).

    Raises:
        InvalidArgumentError: If an anchor lies outside the domain or N < 2.
    """
    centered = _centered(_values(samples, grid))
    indices = np.array([grid.index_of(anchor) for anchor in anchors], dtype=int)
    maps = centered[:, indices].T @ centered / (centered.shape[0] - 1)
    if correlation:
        sd = np.sqrt(np.sum(centered**2, axis=0) / (centered.shape[0] - 1))
        scale = np.outer(sd[indices], sd)
        maps = np.divide(maps, scale, out=np.zeros_like(maps), where=scale > 0)
    return AnchoredMaps(indices, maps)


def correlation_eccentricity(
    correlation_map: np.ndarray, grid: Grid, anchor: Sequence[float], threshold: float = 0.5
) -> float:
    """
    Eccentricity ``sqrt(1 - lambda_min / lambda_max)`` of the second-moment
    matrix of the cells whose correlation with the anchor is at least
    ``threshold``; 0 is isotropic.
    """
    if grid.d != 2:
        raise InvalidArgumentError("Eccentricity is defined for two-dimensional grids")
    correlation_map = np.asarray(correlation_map, dtype=np.float64)
    centre = grid.points[grid.index_of(anchor)]
    offsets = grid.points[correlation_map >= threshold] - centre
    if offsets.shape[0] < 3:
        return 0.0
    eigenvalues = np.linalg.eigvalsh(offsets.T @ offsets / offsets.shape[0])
    if eigenvalues[-1] <= 0:
        return 0.0
    return float(np.sqrt(max(0.0, 1.0 - eigenvalues[0] / eigenvalues[-1])))


@dataclass(frozen=True)
class KdeResult:
    """
    Kernel density on an evaluation grid, or a point mass.

    Attributes:
        x (np.ndarray): Evaluation points (first coordinate).
        density (Optional[np.ndarray]): Density values, ``None`` for a point mass.
        y (Optional[np.ndarray]): Second coordinate for joint densities.
        point_mass (Optional[np.ndarray]): Location of the mass for degenerate samples.
    """

    x: np.ndarray
    density: Optional[np.ndarray]
    y: Optional[np.ndarray] = None
    point_mass: Optional[np.ndarray] = None

    @property
    def is_point_mass(self) -> bool:
        return self.point_mass is not None

    def to_frame(self) -> pd.DataFrame:
        if self.is_point_mass:
            columns = {"x": [self.point_mass[0]]}
            if self.y is not None:
                columns["y"] = [self.point_mass[1]]
            columns["density"] = [np.inf]
            return pd.DataFrame(columns)
        if self.y is None:
            return pd.DataFrame({"x": self.x, "density": self.density})
        xx, yy = np.meshgrid(self.x, self.y, indexing="ij")
        return pd.DataFrame({"x": xx.ravel(), "y": yy.ravel(), "density": self.density.ravel()})


def _bw_method(bandwidth, std: float):
    if bandwidth is None or isinstance(bandwidth, str):
        return bandwidth or "silverman"
    if not bandwidth > 0:
        raise InvalidArgumentError(f"Bandwidth must be positive, got {bandwidth}")
    # gaussian_kde scales its factor by the sample standard deviation.
    return float(bandwidth) / std


def kde_1d(samples, bandwidth=None, n_points: int = 512) -> KdeResult:
    """
    Gaussian kernel density estimate, Silverman bandwidth by default.

    Args:
        samples: At least 10 reals.
        bandwidth: Rule name accepted by ``gaussian_kde`` or a kernel standard
            deviation in data units.
        n_points: Size of the evaluation grid, which spans the data plus four
            kernel widths on both sides.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size < MIN_KDE_SAMPLES:
        raise InvalidArgumentError(f"Need at least {MIN_KDE_SAMPLES} samples, got {x.size}")
    std = float(np.std(x, ddof=1))
    if std == 0.0:
        return KdeResult(np.array([x[0]]), None, point_mass=np.array([x[0]]))
    kde = gaussian_kde(x, bw_method=_bw_method(bandwidth, std))
    width = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(x.min() - 4.0 * width, x.max() + 4.0 * width, n_points)
    return KdeResult(grid, kde(grid))


def kde_2d(x, y, bandwidth=None, n_points: int = 128) -> KdeResult:
    """Joint Gaussian kernel density of paired samples on a square evaluation grid."""
    data = np.vstack([np.asarray(x, dtype=np.float64).reshape(-1), np.asarray(y, dtype=np.float64).reshape(-1)])
    if data.shape[1] < MIN_KDE_SAMPLES:
        raise InvalidArgumentError(f"Need at least {MIN_KDE_SAMPLES} samples, got {data.shape[1]}")
    if np.linalg.matrix_rank(np.cov(data)) < 2:
        return KdeResult(data[:1, :1].ravel(), None, y=data[1:, :1].ravel(), point_mass=data[:, 0].copy())
    std = float(np.sqrt(np.mean(np.var(data, axis=1, ddof=1))))
    kde = gaussian_kde(data, bw_method=_bw_method(bandwidth, std))
    widths = np.sqrt(np.diag(kde.covariance))
    axes = [
        np.linspace(row.min() - 4.0 * w, row.max() + 4.0 * w, n_points) for row, w in zip(data, widths)
    ]
    xx, yy = np.meshgrid(*axes, indexing="ij")
    density = kde(np.vstack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
    return KdeResult(axes[0], density, y=axes[1])


def gumbel_quantile(q: float) -> float:
    """Standard Gumbel quantile ``-ln(-ln q)``."""
    if not 0.0 < q < 1.0:
        raise InvalidArgumentError(f"Quantile level must lie in (0, 1), got {q}")
    return float(-np.log(-np.log(q)))


@dataclass(frozen=True)
class ExceedanceCurve:
    """Conditional exceedance probability per lag bin for one quantile level."""

    q: float
    threshold: float
    lags: np.ndarray
    probabilities: np.ndarray
    counts: np.ndarray


def exceedance_curve(
    samples: Samples,
    grid: Grid,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    n_bins: int = 20,
    max_pairs: int = DEFAULT_MAX_PAIRS,
    rng: Optional[SeededRng] = None,
    log: bool = False,
) -> List[ExceedanceCurve]:
    """
    ``P(Y(s_i) > y | Y(s_j) > y)`` against lag with ``y`` the standard Gumbel
    quantile of each level.

    For unordered pairs ``i < j`` in a bin the estimate is the number of joint
    exceedances over the mean of the two marginal exceedance counts. Bins
    without a conditioning event are left out.

    Args:
        log: Take the logarithm of the realisations first.

    Raises:
        InsufficientDataError: If no realisation exceeds a threshold anywhere.
    """
    values = _values(samples, grid)
    if log:
        if np.any(values <= 0):
            raise InvalidArgumentError("Logarithm of non-positive realisations")
        values = np.log(values)
    I, J = _location_pairs(grid.n, max_pairs, rng, include_diagonal=False)
    index, _, centers = _lag_bins(grid, I, J, n_bins)
    inside = index >= 0

    curves = []
    for q in quantiles:
        y = gumbel_quantile(q)
        exceed = (values > y).astype(np.float64)
        marginal = exceed.sum(axis=0)
        if not marginal.any():
            raise InsufficientDataError(f"No realisation exceeds the {q} Gumbel quantile {y:.4f}")
        joint = _pair_sums(exceed, exceed, I, J)
        conditioning = 0.5 * (marginal[I] + marginal[J])
        both = np.bincount(index[inside], weights=joint[inside], minlength=n_bins)
        either = np.bincount(index[inside], weights=conditioning[inside], minlength=n_bins)
        counts = np.bincount(index[inside], minlength=n_bins)
        present = either > 0
        curves.append(
            ExceedanceCurve(
                q=float(q),
                threshold=y,
                lags=centers[present],
                probabilities=both[present] / either[present],
                counts=counts[present],
            )
        )
    return curves


def exceedance_frame(curves: Sequence[ExceedanceCurve]) -> pd.DataFrame:
    return pd.concat(
        [pd.DataFrame({"q": c.q, "lag": c.lags, "prob": c.probabilities}) for c in curves],
        ignore_index=True,
    )
