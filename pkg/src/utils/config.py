"""
Run configuration documents.

A RunConfig is a YAML mapping with the sections ``grid``, ``model``,
``target``, ``calibration``, ``inference``, ``simulate``, ``diagnostics`` and
the top-level keys ``output``, ``seed`` and ``threads``. Every section is
parsed into a frozen dataclass; keys that a section does not define are
rejected.

Example:
    ```yaml
    grid: {bounds: [[-4, 4], [-4, 4]], dims: [16, 16]}
    model: {variant: SBNN-IL, hidden: [40, 40, 40], centroid_dims: [8, 8], tau: 1.0}
    target: {kind: stationary-sqexp-gp, length_scale: 1.0}
    calibration: {N: 256, outer_steps: 800}
    seed: 42
    ```
"""

import dataclasses
import logging
import os
import yaml
from pathlib import Path

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple, Type, TypeVar, Union

from src.core.calibration import CalibConfig
from src.core.exceptions import ConfigError, InvalidArgumentError, SBNNError
from src.core.grid import Grid, grid_locations
from src.core.inference import SghmcConfig, TRANSFORMS
from src.core.sbnn import Architecture, Variant, build_architecture, centroid_embedding
from src.core.targets import TargetKind, TargetSpec

_logger = logging.getLogger(__name__)

THREADS_ENV = "SBNN_THREADS"

T = TypeVar("T")


@dataclass(frozen=True)
class GridConfig:
    bounds: Tuple[Tuple[float, float], ...] = ((-4.0, 4.0), (-4.0, 4.0))
    dims: Tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", tuple(tuple(float(v) for v in pair) for pair in self.bounds))
        object.__setattr__(self, "dims", tuple(int(k) for k in self.dims))

    def build(self) -> Grid:
        return grid_locations(self.bounds, self.dims)


@dataclass(frozen=True)
class ModelConfig:
    """
    Attributes:
        variant (str): One of the six variant names.
        hidden (Tuple[int, ...]): Hidden layer widths.
        centroid_dims (Tuple[int, ...]): Embedding centroid grid (SBNN variants).
        centroid_bounds (Optional[...]): Domain of the centroids, the grid bounds when unset.
        tau (float): Embedding length scale.
    """

    variant: str = "SBNN-IL"
    hidden: Tuple[int, ...] = (40, 40, 40)
    centroid_dims: Tuple[int, ...] = (15, 15)
    centroid_bounds: Optional[Tuple[Tuple[float, float], ...]] = None
    tau: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant).value)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "centroid_dims", tuple(int(k) for k in self.centroid_dims))
        if self.centroid_bounds is not None:
            object.__setattr__(
                self, "centroid_bounds", tuple(tuple(float(v) for v in pair) for pair in self.centroid_bounds)
            )

    def build(self, grid: Grid) -> Architecture:
        variant = Variant(self.variant)
        embedding = None
        if variant.spatial:
            embedding = centroid_embedding(self.centroid_bounds or grid.bounds, self.centroid_dims, self.tau)
        return build_architecture(variant, self.hidden, spatial_dim=grid.d, embedding=embedding)


@dataclass(frozen=True)
class TargetConfig:
    """
    Attributes:
        center (Optional[bool]): Detrend target batches; lognormal targets are
            centered when unset.
    """

    kind: str = TargetKind.STATIONARY_SQEXP.value
    length_scale: float = 1.0
    kappa: float = 1.0
    focal: Tuple[float, ...] = (0.5, 1.0)
    path: Optional[str] = None
    center: Optional[bool] = None
    pilot_size: int = 4096

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TargetKind(self.kind).value)
        object.__setattr__(self, "focal", tuple(float(v) for v in self.focal))

    def build(self) -> TargetSpec:
        return TargetSpec(TargetKind(self.kind), self.length_scale, self.kappa, self.focal, self.path)

    @property
    def centered(self) -> bool:
        return self.center if self.center is not None else self.kind == TargetKind.LOGNORMAL_MATERN32.value


@dataclass(frozen=True)
class InferenceConfig:
    """
    Sampler settings plus the observation dataset they apply to.

    Attributes:
        dataset (Optional[str]): CSV with columns ``s1[,s2],value``.
        noise_var (float): Observation noise variance.
        transform (str): ``identity`` or ``log``.
        observations (int): Dataset size of ``make-dataset``.
    """

    dataset: Optional[str] = None
    noise_var: float = 0.001
    transform: str = "identity"
    observations: int = 100
    chains: int = 4
    iterations: int = 300_000
    burn_in: int = 100_000
    thin: int = 1000
    step_size: float = 1e-5
    friction: float = 0.05
    minibatch: Optional[int] = None

    def __post_init__(self) -> None:
        if self.transform not in TRANSFORMS:
            raise InvalidArgumentError(f"Unknown transform {self.transform!r}, expected one of {TRANSFORMS}")
        if not self.noise_var > 0:
            raise InvalidArgumentError(f"Noise variance must be positive, got {self.noise_var}")

    def sampler(self, seed: int, threads: int = 1) -> SghmcConfig:
        return SghmcConfig(
            chains=self.chains,
            iterations=self.iterations,
            burn_in=self.burn_in,
            thin=self.thin,
            step_size=self.step_size,
            friction=self.friction,
            minibatch=self.minibatch,
            seed=seed,
            threads=threads,
        )


@dataclass(frozen=True)
class SimulateConfig:
    count: int = 8


@dataclass(frozen=True)
class DiagnosticsConfig:
    """
    Attributes:
        count (int): Prior draws when a checkpoint is diagnosed.
        anchors (Tuple[Tuple[float, ...], ...]): Anchors of the covariance maps.
        kde_locations (Tuple[Tuple[float, ...], ...]): Locations of marginal densities.
        exceedance (bool): Write conditional exceedance curves.
        log (bool): Take logarithms before the exceedance curves.
    """

    n_bins: int = 20
    max_pairs: int = 200_000
    count: int = 2000
    anchors: Tuple[Tuple[float, ...], ...] = ()
    kde_locations: Tuple[Tuple[float, ...], ...] = ()
    bandwidth: Optional[float] = None
    exceedance: bool = False
    quantiles: Tuple[float, ...] = (0.95, 0.98, 0.99, 0.995)
    log: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(tuple(float(v) for v in a) for a in self.anchors))
        object.__setattr__(self, "kde_locations", tuple(tuple(float(v) for v in a) for a in self.kde_locations))
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))


_CALIBRATION_KEYS = tuple(f.name for f in dataclasses.fields(CalibConfig) if f.name != "seed")


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    target: TargetConfig = field(default_factory=TargetConfig)
    calibration: Dict[str, Any] = field(default_factory=dict)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    output: str = "out"
    seed: int = 0
    threads: Optional[int] = None

    def calib_config(self) -> CalibConfig:
        return CalibConfig(seed=self.seed, **self.calibration)

    def env_threads(self) -> Optional[int]:
        """Thread count from ``SBNN_THREADS``, when set."""
        env = os.environ.get(THREADS_ENV)
        if not env:
            return None
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from e

    @classmethod
    def from_dict(cls, document: Optional[Dict[str, Any]]) -> "RunConfig":
        """
        Raises:
            ConfigError: On unknown keys or invalid values.
        """
        document = dict(document or {})
        _reject_unknown(document, {f.name for f in dataclasses.fields(cls)}, "document")
        calibration = dict(document.get("calibration") or {})
        _reject_unknown(calibration, set(_CALIBRATION_KEYS), "calibration")
        try:
            config = cls(
                grid=_section(GridConfig, document.get("grid"), "grid"),
                model=_section(ModelConfig, document.get("model"), "model"),
                target=_section(TargetConfig, document.get("target"), "target"),
                calibration=calibration,
                inference=_section(InferenceConfig, document.get("inference"), "inference"),
                simulate=_section(SimulateConfig, document.get("simulate"), "simulate"),
                diagnostics=_section(DiagnosticsConfig, document.get("diagnostics"), "diagnostics"),
                output=str(document.get("output", "out")),
                seed=int(document.get("seed", 0)),
                threads=None if document.get("threads") is None else int(document["threads"]),
            )
            config.calib_config()
            config.target.build()
        except ConfigError:
            raise
        except (SBNNError, ValueError, TypeError) as e:
            raise ConfigError(f"Invalid configuration: {e}") from e
        if not 0 <= config.seed < 2**64:
            raise ConfigError(f"Seed must be an unsigned 64-bit integer, got {config.seed}")
        return config

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data form that ``from_dict`` reads back to an equal config."""
        document = dataclasses.asdict(self)
        return _plain(document)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _reject_unknown(document: Dict[str, Any], allowed, where: str) -> None:
    unknown = sorted(set(document) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown keys in {where}: {unknown}")


def _section(cls: Type[T], document: Optional[Dict[str, Any]], where: str) -> T:
    document = dict(document or {})
    _reject_unknown(document, {f.name for f in dataclasses.fields(cls)}, where)
    return cls(**document)


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(v) for key, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """
    Read a RunConfig from YAML; ``None`` gives the defaults.

    Raises:
        ConfigError: If the file cannot be read or parsed.
    """
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = yaml.safe_load(handle)
    except OSError as e:
        raise ConfigError(f"Cannot read configuration {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse configuration {path}: {e}") from e
    if document is not None and not isinstance(document, dict):
        raise ConfigError(f"Configuration {path} must be a mapping")
    _logger.info("Loaded configuration from %s", path)
    return RunConfig.from_dict(document)

