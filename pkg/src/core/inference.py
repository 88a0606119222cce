"""
Posterior inference over the weights and biases of calibrated I-variant
networks by stochastic gradient Hamiltonian Monte Carlo, predictive fields,
the exact Gaussian-process benchmark and chain diagnostics.
"""

import logging
import math
import numpy as np
import torch

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from scipy.linalg import cho_solve
from typing import Optional, Sequence, Tuple

from src.core.autodiff import as_tensor, grad
from src.core.exceptions import (
    InsufficientDataError,
    InvalidArgumentError,
    NumericalFailureError,
    UnsupportedVariantError,
)
from src.core.grid import Grid
from src.core.linalg import cholesky, sample_mvn, softplus
from src.core.rng import SeededRng
from src.core.sbnn import Architecture, HyperParams, ParamDraw, count_parameters, forward, sample_prior_params
from src.core.targets import TargetKind, TargetSpec, cross_covariance, simulate_target

_logger = logging.getLogger(__name__)

TRANSFORMS = ("identity", "log")
DEFAULT_MINIBATCH = 32
_PREDICTIVE_CHUNK = 256


@dataclass(frozen=True)
class Dataset:
    """
    Noisy point observations.

    Attributes:
        locations (np.ndarray): ``m x d`` observation sites.
        values (np.ndarray): ``m`` observed values on the data scale.
        noise_var (float): Observation noise variance on the modelled scale.
        transform (str): ``identity`` or ``log``; with ``log`` the network
            models the logarithm of the values.
        offset (Optional[np.ndarray]): Prior mean at each site on the modelled
            scale, removed before the network is fitted.
    """

    locations: np.ndarray
    values: np.ndarray
    noise_var: float
    transform: str = "identity"
    offset: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        locations = np.asarray(self.locations, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if locations.ndim == 1:
            locations = locations.reshape(values.size, -1) if values.size else locations.reshape(0, 2)
        if locations.shape[0] != values.size:
            raise InvalidArgumentError(
                f"{locations.shape[0]} observation sites but {values.size} values"
            )
        if not np.all(np.isfinite(locations)) or not np.all(np.isfinite(values)):
            raise InvalidArgumentError("Observations must be finite")
        if not self.noise_var > 0:
            raise InvalidArgumentError(f"Noise variance must be positive, got {self.noise_var}")
        if self.transform not in TRANSFORMS:
            raise InvalidArgumentError(f"Unknown transform {self.transform!r}, expected one of {TRANSFORMS}")
        if self.transform == "log" and np.any(values <= 0):
            raise InvalidArgumentError("The log transform needs positive observations")
        if self.offset is not None:
            offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)
            if offset.size != values.size or not np.all(np.isfinite(offset)):
                raise InvalidArgumentError(f"Offset needs {values.size} finite values, got {offset.size}")
            object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "locations", locations)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def m(self) -> int:
        return int(self.values.size)

    @property
    def observed(self) -> np.ndarray:
        """Values on the modelled scale."""
        return np.log(self.values) if self.transform == "log" else self.values

    @property
    def residual(self) -> np.ndarray:
        """Observed values on the modelled scale minus the offset."""
        return self.observed if self.offset is None else self.observed - self.offset

    def centered_on(self, mean_field: np.ndarray, grid: Grid) -> "Dataset":
        """
        Copy whose offset is ``mean_field`` read at the grid cell of every site.

        Raises:
            InvalidArgumentError: If the mean field does not fit the grid or a
                site lies outside it.
        """
        mean_field = np.asarray(mean_field, dtype=np.float64)
        if mean_field.shape != (grid.n,):
            raise InvalidArgumentError(f"Mean field has shape {mean_field.shape}, expected ({grid.n},)")
        cells = [grid.index_of(site) for site in self.locations]
        return Dataset(self.locations, self.values, self.noise_var, self.transform, mean_field[cells])

    def check_domain(self, grid: Grid) -> None:
        """
        Raises:
            InvalidArgumentError: If a site lies outside the grid's domain.
        """
        if self.m and self.locations.shape[1] != grid.d:
            raise InvalidArgumentError(f"Sites are {self.locations.shape[1]}-D but the grid is {grid.d}-D")
        outside = [i for i, site in enumerate(self.locations) if not grid.contains(site)]
        if outside:
            raise InvalidArgumentError(f"Observation sites {outside[:5]} lie outside the domain")


@dataclass(frozen=True)
class SghmcConfig:
    """
    Chain protocol of the sampler.

    Attributes:
        chains (int): Number of independent chains.
        iterations (int): Iterations per chain, burn-in included.
        burn_in (int): Discarded leading iterations.
        thin (int): Keep every ``thin``-th iteration after burn-in.
        step_size (float): Integrator step; zero freezes the chains.
        friction (float): Momentum friction in ``(0, 1]``.
        minibatch (Optional[int]): Observations per gradient; ``min(m, 32)`` when unset.
        seed (int): Root seed; chain ``c`` uses stream ``c``.
        threads (int): Chains run concurrently on this many threads.
    """

    chains: int = 4
    iterations: int = 300_000
    burn_in: int = 100_000
    thin: int = 1000
    step_size: float = 1e-5
    friction: float = 0.05
    minibatch: Optional[int] = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.chains < 1 or self.iterations < 1:
            raise InvalidArgumentError("Need at least one chain and one iteration")
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidArgumentError(
                f"Burn-in {self.burn_in} must be nonnegative and below the iteration count {self.iterations}"
            )
        if self.thin < 1:
            raise InvalidArgumentError(f"Thinning factor must be at least 1, got {self.thin}")
        if self.step_size < 0 or not 0 < self.friction <= 1:
            raise InvalidArgumentError("Step size must be nonnegative and friction must lie in (0, 1]")
        if self.minibatch is not None and self.minibatch < 1:
            raise InvalidArgumentError(f"Minibatch must be positive, got {self.minibatch}")
        if self.threads < 1:
            raise InvalidArgumentError(f"Thread count must be positive, got {self.threads}")

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def batch_size(self, m: int) -> int:
        """
        Raises:
            InvalidArgumentError: If the configured minibatch exceeds ``m``.
        """
        if self.minibatch is None:
            return min(m, DEFAULT_MINIBATCH)
        if self.minibatch > m:
            raise InvalidArgumentError(f"Minibatch {self.minibatch} exceeds the {m} observations")
        return self.minibatch


@dataclass(frozen=True)
class PosteriorSamples:
    """
    Thinned post-burn-in draws of the flattened weights and biases.

    Attributes:
        draws (np.ndarray): ``chains x draws_per_chain x P``.
        checkpoint_id (str): Identifier of the calibrated prior.
        config (SghmcConfig): Sampler settings.
    """

    draws: np.ndarray
    checkpoint_id: str
    config: SghmcConfig

    @property
    def n_chains(self) -> int:
        return int(self.draws.shape[0])

    @property
    def draws_per_chain(self) -> int:
        return int(self.draws.shape[1])

    def pooled(self) -> np.ndarray:
        """All draws, chain after chain, as ``(chains * draws) x P``."""
        return self.draws.reshape(-1, self.draws.shape[-1])


def _require_invariant(arch: Architecture) -> None:
    if arch.variant.varying:
        raise UnsupportedVariantError(f"Posterior inference is not available for {arch.variant.value}")


def prior_moments(psi: HyperParams, arch: Architecture) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Prior mean and standard deviation of every weight and bias, laid out like
    ``ParamDraw.flatten``.
    """
    _require_invariant(arch)
    psi.check(arch)
    means, scales = [], []
    for layer, (d_out, d_in) in zip(psi.layers, arch.layer_shapes):
        for kind, shape in (("w", (d_out, d_in)), ("b", (d_out,))):
            means.append(layer[f"mu_{kind}"].detach().expand(shape).reshape(-1))
            scales.append(softplus(layer[f"gamma_{kind}"].detach()).expand(shape).reshape(-1))
    return torch.cat(means), torch.cat(scales)


def _field_at(theta: torch.Tensor, locations: np.ndarray, arch: Architecture) -> torch.Tensor:
    return forward(locations, ParamDraw.from_flat(theta, arch), None, arch)[0]


def log_likelihood(
    theta: torch.Tensor, dataset: Dataset, arch: Architecture, indices: Optional[Sequence[int]] = None
) -> torch.Tensor:
    """
    Gaussian log-likelihood of the observations (or a subset) around
    ``offset + forward(theta)``, dropping the ``2 pi`` constant.
    """
    _require_invariant(arch)
    rows = np.arange(dataset.m) if indices is None else np.asarray(indices, dtype=int)
    if rows.size == 0:
        return theta.sum() * 0.0
    z = as_tensor(dataset.residual[rows])
    residual = z - _field_at(theta, dataset.locations[rows], arch)
    return -0.5 * torch.sum(residual**2) / dataset.noise_var - 0.5 * rows.size * math.log(dataset.noise_var)


def log_prior(theta: torch.Tensor, psi: HyperParams, arch: Architecture) -> torch.Tensor:
    """Gaussian log-density of the calibrated prior, dropping the ``2 pi`` constant."""
    mean, scale = prior_moments(psi, arch)
    return torch.sum(-0.5 * ((theta - mean) / scale) ** 2 - torch.log(scale))


def log_posterior_unnorm(theta, dataset: Dataset, psi: HyperParams, arch: Architecture) -> torch.Tensor:
    """
    Unnormalized log posterior of the flattened weights and biases.

    Raises:
        UnsupportedVariantError: For V variants.
    """
    _require_invariant(arch)
    theta = theta if isinstance(theta, torch.Tensor) else as_tensor(theta)
    return log_likelihood(theta, dataset, arch) + log_prior(theta, psi, arch)


def stochastic_energy_grad(
    theta: torch.Tensor,
    dataset: Dataset,
    psi: HyperParams,
    arch: Architecture,
    indices: Sequence[int],
) -> torch.Tensor:
    """
    Gradient of the minibatch potential ``-(m/b) loglik_batch - logprior``.
    """
    leaf = theta.detach().clone().requires_grad_(True)
    scale = dataset.m / max(len(indices), 1)
    energy = -scale * log_likelihood(leaf, dataset, arch, indices) - log_prior(leaf, psi, arch)
    return grad(energy, [leaf])[0]


def _run_chain(
    chain: int, dataset: Dataset, psi: HyperParams, arch: Architecture, config: SghmcConfig
) -> np.ndarray:
    rng = SeededRng(config.seed).stream(chain)
    theta = sample_prior_params(psi, arch, rng, 1).flatten()[0].detach()
    momentum = torch.zeros_like(theta)
    batch = config.batch_size(dataset.m)
    noise_sd = math.sqrt(2.0 * config.friction * config.step_size)
    kept = np.empty((config.draws_per_chain, theta.numel()))
    _logger.info("Chain %d started: %d iterations, minibatch %d", chain, config.iterations, batch)

    recorded = 0
    for iteration in range(1, config.iterations + 1):
        indices = np.sort(rng.choice(dataset.m, batch, replace=False))
        gradient = stochastic_energy_grad(theta, dataset, psi, arch, indices)
        noise = as_tensor(rng.normal(theta.numel())) * noise_sd
        momentum = (1.0 - config.friction) * momentum - config.step_size * gradient + noise
        theta = theta + momentum
        if not torch.all(torch.isfinite(theta)):
            raise NumericalFailureError(
                f"Chain {chain} diverged at iteration {iteration}", chain=chain, iteration=iteration
            )
        offset = iteration - config.burn_in
        if offset > 0 and offset % config.thin == 0 and recorded < kept.shape[0]:
            kept[recorded] = theta.numpy()
            recorded += 1
    _logger.info("Chain %d finished with %d draws", chain, recorded)
    return kept


def sghmc_sample(
    dataset: Dataset,
    psi: HyperParams,
    arch: Architecture,
    config: SghmcConfig,
    checkpoint_id: str = "",
    mean_field: Optional[np.ndarray] = None,
    grid: Optional[Grid] = None,
) -> PosteriorSamples:
    """
    Run ``config.chains`` independent SGHMC chains started from the calibrated
    prior. Each iteration updates a persistent momentum
    ``v <- (1 - friction) v - step grad U(theta) + N(0, 2 friction step)`` and
    moves ``theta <- theta + v``.

    Args:
        mean_field: Mean field of a centered calibration on ``grid``. The
            network is fitted to the observations minus this field at their
            sites; pass the same field to ``predictive_field``.
        grid: Grid of ``mean_field``.

    Raises:
        UnsupportedVariantError: For V variants.
        InsufficientDataError: If the dataset is empty.
        InvalidArgumentError: If ``mean_field`` comes without a matching grid.
        NumericalFailureError: If a chain diverges.
    """
    _require_invariant(arch)
    psi.check(arch)
    if dataset.m < 1:
        raise InsufficientDataError("Posterior sampling needs at least one observation", 0, 1)
    if mean_field is not None:
        if grid is None:
            raise InvalidArgumentError("A mean field needs the grid it was estimated on")
        dataset = dataset.centered_on(mean_field, grid)
    config.batch_size(dataset.m)
    psi = psi.clone(requires_grad=False)

    def run(chain: int) -> np.ndarray:
        return _run_chain(chain, dataset, psi, arch, config)

    with ThreadPoolExecutor(max_workers=min(config.threads, config.chains)) as executor:
        chains = list(executor.map(run, range(config.chains)))
    draws = np.stack(chains)

    ess = effective_sample_size(draws)
    if np.any(np.isfinite(ess)):
        _logger.info(
            "Parameter ESS over %d chains: min %.1f, median %.1f",
            config.chains,
            np.nanmin(ess),
            np.nanmedian(ess),
        )
    return PosteriorSamples(draws, checkpoint_id, config)


@dataclass(frozen=True)
class PredictiveField:
    """Predictive draws ``D x n`` with their pointwise mean and standard deviation."""

    draws: np.ndarray
    mean: np.ndarray
    sd: np.ndarray


def _summarize(draws: np.ndarray) -> PredictiveField:
    ddof = 1 if draws.shape[0] > 1 else 0
    return PredictiveField(draws, draws.mean(axis=0), draws.std(axis=0, ddof=ddof))


def predictive_field(
    samples: PosteriorSamples,
    grid: Grid,
    arch: Architecture,
    mean_field: Optional[np.ndarray] = None,
    back_transform: bool = False,
) -> PredictiveField:
    """
    Push every stored draw through the network on the grid.

    Args:
        mean_field: Added to each field on the modelled scale, before any
            back-transform; the field the chains were centered on.
        back_transform: Exponentiate the fields (log-transformed datasets).

    Raises:
        InvalidArgumentError: If there are no draws or shapes disagree.
    """
    _require_invariant(arch)
    theta = samples.pooled()
    if theta.shape[0] == 0:
        raise InvalidArgumentError("No posterior draws to push through the network")
    if theta.shape[1] != count_parameters(arch)[0]:
        raise InvalidArgumentError("Posterior draws do not match the architecture")
    chunks = []
    with torch.no_grad():
        for start in range(0, theta.shape[0], _PREDICTIVE_CHUNK):
            draw = ParamDraw.from_flat(theta[start : start + _PREDICTIVE_CHUNK], arch)
            chunks.append(forward(grid.points, draw, None, arch).numpy())
    fields = np.concatenate(chunks)
    if mean_field is not None:
        mean_field = np.asarray(mean_field, dtype=np.float64)
        if mean_field.shape != (grid.n,):
            raise InvalidArgumentError(f"Mean field has shape {mean_field.shape}, expected ({grid.n},)")
        fields = fields + mean_field
    if back_transform:
        fields = np.exp(fields)
    ess = effective_sample_size(fields.reshape(samples.n_chains, samples.draws_per_chain, grid.n))
    if np.any(np.isfinite(ess)):
        _logger.info(
            "Predictive ESS over %d locations: min %.1f, median %.1f", grid.n, np.nanmin(ess), np.nanmedian(ess)
        )
    return _summarize(fields)


def kriging_oracle(
    dataset: Dataset,
    spec: TargetSpec,
    grid: Grid,
    n_draws: int = 0,
    rng: Optional[SeededRng] = None,
    back_transform: bool = False,
) -> PredictiveField:
    """
    Exact Gaussian conditioning of the target on the observations.

    Mean ``K_*' (K + s2 I)^-1 z`` and covariance ``K_** - K_*' (K + s2 I)^-1 K_*``.
    Lognormal targets are conditioned on the log scale; with
    ``back_transform`` the lognormal moments and exponentiated draws are returned.

    Raises:
        InvalidArgumentError: For external targets.
        NumericalFailureError: If a factorization fails.
    """
    if not spec.kind.is_simulable:
        raise InvalidArgumentError("The kriging benchmark needs a Gaussian-based target")
    prior = cross_covariance(grid.points, grid.points, spec)
    if dataset.m:
        dataset.check_domain(grid)
        observed = cross_covariance(dataset.locations, dataset.locations, spec)
        observed[np.diag_indices_from(observed)] += dataset.noise_var
        factor = (cholesky(observed), True)
        cross = cross_covariance(dataset.locations, grid.points, spec)
        mean = cross.T @ cho_solve(factor, dataset.observed)
        cov = prior - cross.T @ cho_solve(factor, cross)
    else:
        mean, cov = np.zeros(grid.n), prior
    cov = 0.5 * (cov + cov.T)
    variance = np.clip(np.diag(cov), 0.0, None)

    draws = np.empty((0, grid.n))
    if n_draws:
        rng = rng if rng is not None else SeededRng(0)
        draws = sample_mvn(mean, cholesky(cov, jitter=1e-10), rng, n_draws)
    if back_transform and spec.kind is TargetKind.LOGNORMAL_MATERN32:
        lognormal_mean = np.exp(mean + variance / 2.0)
        lognormal_sd = np.sqrt(np.expm1(variance)) * lognormal_mean
        return PredictiveField(np.exp(draws), lognormal_mean, lognormal_sd)
    return PredictiveField(draws, mean, np.sqrt(variance))


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """
    Multi-chain effective sample size by the initial monotone sequence
    estimator.

    Args:
        chains: ``C x D`` draws of a scalar or ``C x D x k`` draws of ``k`` scalars.

    Returns:
        np.ndarray: ESS per scalar (NaN for constant or too short chains).
    """
    chains = np.asarray(chains, dtype=np.float64)
    squeeze = chains.ndim == 2
    if squeeze:
        chains = chains[..., None]
    C, D, k = chains.shape
    if D < 4:
        ess = np.full(k, np.nan)
        return float(ess[0]) if squeeze else ess

    centered = chains - chains.mean(axis=1, keepdims=True)
    size = 1 << (2 * D - 1).bit_length()
    spectrum = np.fft.rfft(centered, n=size, axis=1)
    autocov = np.fft.irfft(spectrum * np.conj(spectrum), n=size, axis=1)[:, :D] / D

    chain_var = autocov[:, 0] * D / (D - 1.0)
    within = chain_var.mean(axis=0)
    var_plus = within * (D - 1.0) / D
    if C > 1:
        var_plus = var_plus + chains.mean(axis=1).var(axis=0, ddof=1)

    ess = np.full(k, np.nan)
    for j in range(k):
        if not var_plus[j] > 0:
            continue
        rho = 1.0 - (within[j] - autocov[:, :, j].mean(axis=0)) / var_plus[j]
        rho[0] = 1.0
        pairs = rho[: D - D % 2].reshape(-1, 2).sum(axis=1)
        positive = np.argmax(pairs < 0) if np.any(pairs < 0) else pairs.size
        pairs = np.minimum.accumulate(pairs[:positive])
        tau = max(-1.0 + 2.0 * pairs.sum(), 1.0 / math.log10(C * D + 10))
        ess[j] = C * D / tau
    return float(ess[0]) if squeeze else ess


@dataclass(frozen=True)
class SimulatedDataset:
    """Observation dataset with the full realisation it was drawn from."""

    dataset: Dataset
    truth: np.ndarray
    indices: np.ndarray


def simulate_dataset(
    spec: TargetSpec,
    grid: Grid,
    m: int,
    noise_var: float,
    rng: SeededRng,
    transform: Optional[str] = None,
) -> SimulatedDataset:
    """
    Observe one target realisation at ``m`` distinct grid locations with
    Gaussian noise of variance ``noise_var`` on the modelled scale.

    Lognormal targets default to the log transform, with the noise added to
    the logarithm.
    """
    if not 0 <= m <= grid.n:
        raise InvalidArgumentError(f"Cannot observe {m} of {grid.n} grid locations")
    transform = transform or ("log" if spec.kind is TargetKind.LOGNORMAL_MATERN32 else "identity")
    truth = simulate_target(spec, grid, 1, rng.stream(0)).values[0]
    indices = np.sort(rng.stream(1).choice(grid.n, m, replace=False))
    noise = rng.stream(2).normal(m) * math.sqrt(noise_var)
    if transform == "log":
        if np.any(truth[indices] <= 0):
            raise InvalidArgumentError("The log transform needs a positive target")
        values = np.exp(np.log(truth[indices]) + noise)
    else:
        values = truth[indices] + noise
    dataset = Dataset(grid.points[indices], values, noise_var, transform)
    _logger.info("Simulated %d observations (%s scale) on %s", m, transform, grid.grid_id)
    return SimulatedDataset(dataset, truth, indices)
