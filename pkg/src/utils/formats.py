"""
Binary file formats of the toolkit.

Every file starts with a text header: a magic line, ``key value`` lines and a
closing ``end`` line, followed by little-endian float64 payload.

Realisations (``.sbr``)::

    SBNNREAL
    version 1
    ndim 2
    bounds -4.0 4.0 -4.0 4.0
    dims 64 64
    count 8
    log 0
    mean_field 0
    end
    [n mean-field values if mean_field is 1] [count x n values, row-major grid order]

Checkpoints (``.ckpt``) carry the variant, layer widths, embedding, the
flattened hyper-parameters (per layer, weights then biases, location block
before scale block), an optional mean field with its grid, and the seed.
Posterior files (``.post``) carry ``chains x draws x P`` flattened weights and
biases together with the sampler settings and the checkpoint id.
"""

import hashlib
import logging
import numpy as np

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.exceptions import FormatError, InvalidArgumentError
from src.core.fields import FieldSampleSet
from src.core.grid import Grid, grid_locations
from src.core.inference import PosteriorSamples, SghmcConfig
from src.core.sbnn import Architecture, Embedding, HyperParams, count_parameters

_logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
REALISATION_MAGIC = "SBNNREAL"
CHECKPOINT_MAGIC = "SBNNCKPT"
POSTERIOR_MAGIC = "SBNNPOST"
_FLOAT = np.dtype("<f8")


def _format_value(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_format_value(v) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def encode_header(magic: str, fields: Sequence[Tuple[str, object]]) -> bytes:
    lines = [magic, f"version {FORMAT_VERSION}"]
    lines += [f"{key} {_format_value(value)}".rstrip() for key, value in fields]
    lines.append("end")
    return ("\n".join(lines) + "\n").encode("ascii")


def decode_header(data: bytes, magic: str) -> Tuple[Dict[str, str], int]:
    """
    Parse a header.

    Returns:
        Tuple[Dict[str, str], int]: Raw values per key and the payload offset.

    Raises:
        FormatError: On a wrong magic, an unsupported version or a missing ``end``.
    """
    offset, line_no, fields = 0, 0, {}
    while True:
        newline = data.find(b"\n", offset)
        if newline < 0:
            raise FormatError("Header is not terminated by an 'end' line", line=line_no + 1)
        try:
            line = data[offset:newline].decode("ascii").strip()
        except UnicodeDecodeError as e:
            raise FormatError(f"Header line {line_no + 1} is not ASCII", line=line_no + 1) from e
        offset, line_no = newline + 1, line_no + 1
        if line_no == 1:
            if line != magic:
                raise FormatError(f"Expected magic {magic!r}, found {line[:16]!r}", line=1)
            continue
        if line == "end":
            break
        key, _, value = line.partition(" ")
        fields[key] = value.strip()
    version = fields.get("version")
    if version != str(FORMAT_VERSION):
        raise FormatError(f"Unsupported format version {version!r}, expected {FORMAT_VERSION}", line=2)
    return fields, offset


def _require(fields: Dict[str, str], key: str) -> str:
    if key not in fields:
        raise FormatError(f"Header has no {key!r} entry")
    return fields[key]


def _ints(text: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split())
    except ValueError as e:
        raise FormatError(f"Expected integers, found {text!r}") from e
    if not values:
        raise FormatError("Expected integers, found an empty entry")
    return values


def _floats(text: str) -> Tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split())
    except ValueError as e:
        raise FormatError(f"Expected numbers, found {text!r}") from e
    if not values:
        raise FormatError("Expected numbers, found an empty entry")
    return values


def _grid_fields(grid: Grid, prefix: str = "") -> List[Tuple[str, object]]:
    return [
        (f"{prefix}bounds", [v for pair in grid.bounds for v in pair]),
        (f"{prefix}dims", list(grid.dims)),
    ]


def _grid_from(fields: Dict[str, str], prefix: str = "") -> Grid:
    bounds = _floats(_require(fields, f"{prefix}bounds"))
    dims = _ints(_require(fields, f"{prefix}dims"))
    if len(bounds) != 2 * len(dims):
        raise FormatError(f"{len(bounds)} bounds do not describe {len(dims)} axes")
    try:
        return grid_locations(tuple(zip(bounds[0::2], bounds[1::2])), dims)
    except InvalidArgumentError as e:
        raise FormatError(f"Invalid grid in header: {e}") from e


def _payload(data: bytes, offset: int, count: int, what: str) -> np.ndarray:
    available = (len(data) - offset) // _FLOAT.itemsize
    if available < count or (len(data) - offset) % _FLOAT.itemsize:
        raise FormatError(f"{what} payload holds {available} values, expected {count}")
    if available > count:
        raise FormatError(f"{what} payload has {available - count} trailing values")
    return np.frombuffer(data, dtype=_FLOAT, count=count, offset=offset).astype(np.float64)


@dataclass(frozen=True)
class Realisations:
    """
    Contents of a realisation file.

    Attributes:
        samples (FieldSampleSet): Fields on the modelled scale (log applied
            when the header asks for it).
        grid (Grid): Grid of the fields.
        log (bool): Whether the stored values were log-transformed on load.
        mean_field (Optional[np.ndarray]): Stored mean field.
    """

    samples: FieldSampleSet
    grid: Grid
    log: bool = False
    mean_field: Optional[np.ndarray] = None


def encode_realisations(
    values: np.ndarray, grid: Grid, log: bool = False, mean_field: Optional[np.ndarray] = None
) -> bytes:
    """Serialize ``count x n`` stored values (positive when ``log`` is set)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != grid.n:
        raise InvalidArgumentError(f"Realisations of shape {values.shape} do not fit a grid of {grid.n}")
    fields = [("ndim", grid.d), *_grid_fields(grid), ("count", values.shape[0])]
    fields += [("log", int(log)), ("mean_field", int(mean_field is not None))]
    parts = [encode_header(REALISATION_MAGIC, fields)]
    if mean_field is not None:
        parts.append(np.asarray(mean_field, dtype=_FLOAT).reshape(grid.n).tobytes())
    parts.append(values.astype(_FLOAT).tobytes())
    return b"".join(parts)


def decode_realisations(data: bytes) -> Realisations:
    """
    Raises:
        FormatError: On a malformed header, short records or non-finite values,
            with the index of the first bad record.
    """
    fields, offset = decode_header(data, REALISATION_MAGIC)
    grid = _grid_from(fields)
    if int(_require(fields, "ndim")) != grid.d:
        raise FormatError("Header ndim disagrees with its bounds")
    count = _ints(_require(fields, "count"))[0]
    log = _require(fields, "log") == "1"
    has_mean = _require(fields, "mean_field") == "1"
    n_mean = grid.n if has_mean else 0
    available = (len(data) - offset) // _FLOAT.itemsize - n_mean
    if available < count * grid.n:
        raise FormatError(
            f"File holds {max(available, 0) // grid.n} complete records, header announces {count}",
            record=max(available, 0) // grid.n,
        )
    flat = _payload(data, offset, n_mean + count * grid.n, "Realisation")
    mean_field = flat[:n_mean] if has_mean else None
    values = flat[n_mean:].reshape(count, grid.n)
    if log:
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.log(values)
    bad = np.flatnonzero(~np.all(np.isfinite(values), axis=1))
    if bad.size:
        raise FormatError(f"Record {bad[0]} contains non-finite values", record=int(bad[0]))
    samples = FieldSampleSet(values, grid.grid_id, mean_field=mean_field)
    return Realisations(samples, grid, log, mean_field)


@dataclass(frozen=True)
class Checkpoint:
    """
    Calibrated prior with the provenance needed to rebuild it.

    Attributes:
        variant (str): Variant name.
        dims (Tuple[int, ...]): Layer widths.
        tau (float): Embedding length scale (ignored by BNN variants).
        centroids (Optional[Grid]): Embedding centroid grid.
        psi (np.ndarray): Flattened hyper-parameters.
        mean_field (Optional[np.ndarray]): Field added to every sample.
        grid (Optional[Grid]): Grid of the mean field.
        seed (int): Seed of the run that produced it.
        log_scale (bool): Whether the calibrated fields model the log of the
            data, so observations must be log-transformed to match.
    """

    variant: str
    dims: Tuple[int, ...]
    tau: float
    centroids: Optional[Grid]
    psi: np.ndarray
    mean_field: Optional[np.ndarray] = None
    grid: Optional[Grid] = None
    seed: int = 0
    log_scale: bool = False

    @classmethod
    def from_hyperparams(
        cls,
        psi: HyperParams,
        arch: Architecture,
        seed: int = 0,
        mean_field: Optional[np.ndarray] = None,
        grid: Optional[Grid] = None,
        log_scale: bool = False,
    ) -> "Checkpoint":
        embedding = arch.embedding
        return cls(
            variant=arch.variant.value,
            dims=arch.dims,
            tau=embedding.tau if embedding is not None else 1.0,
            centroids=embedding.centroids if embedding is not None else None,
            psi=psi.flatten(),
            mean_field=None if mean_field is None else np.asarray(mean_field, dtype=np.float64),
            grid=grid if mean_field is not None else None,
            seed=seed,
            log_scale=log_scale,
        )

    def architecture(self) -> Architecture:
        """
        Raises:
            FormatError: If the stored architecture is inconsistent.
        """
        try:
            embedding = Embedding(self.centroids, self.tau) if self.centroids is not None else None
            return Architecture(self.variant, self.dims, embedding)
        except (InvalidArgumentError, ValueError) as e:
            raise FormatError(f"Checkpoint describes an invalid architecture: {e}") from e

    def hyperparams(self, requires_grad: bool = False) -> HyperParams:
        return HyperParams.from_flat(self.psi, self.architecture(), requires_grad=requires_grad)

    def encode(self) -> bytes:
        fields: List[Tuple[str, object]] = [
            ("variant", self.variant),
            ("dims", list(self.dims)),
            ("tau", float(self.tau)),
        ]
        if self.centroids is not None:
            fields += _grid_fields(self.centroids, "centroid_")
        else:
            fields += [("centroid_bounds", "none"), ("centroid_dims", "none")]
        fields.append(("n_hyper", self.psi.size))
        if self.mean_field is not None:
            fields += [("mean_field", self.mean_field.size), *_grid_fields(self.grid, "grid_")]
        else:
            fields.append(("mean_field", 0))
        fields.append(("seed", self.seed))
        fields.append(("log", int(self.log_scale)))
        parts = [encode_header(CHECKPOINT_MAGIC, fields), self.psi.astype(_FLOAT).tobytes()]
        if self.mean_field is not None:
            parts.append(self.mean_field.astype(_FLOAT).tobytes())
        return b"".join(parts)

    @property
    def checkpoint_id(self) -> str:
        """Short content hash identifying the checkpoint."""
        return hashlib.sha256(self.encode()).hexdigest()[:16]

    @classmethod
    def decode(cls, data: bytes) -> "Checkpoint":
        """
        Raises:
            FormatError: On a malformed file or a payload length that does not
                match the hyper-parameter count of the architecture.
        """
        fields, offset = decode_header(data, CHECKPOINT_MAGIC)
        centroids = None if _require(fields, "centroid_dims") == "none" else _grid_from(fields, "centroid_")
        n_hyper = _ints(_require(fields, "n_hyper"))[0]
        n_mean = _ints(_require(fields, "mean_field"))[0]
        grid = _grid_from(fields, "grid_") if n_mean else None
        if grid is not None and grid.n != n_mean:
            raise FormatError(f"Mean field of {n_mean} values does not fit its {grid.n}-point grid")
        payload = _payload(data, offset, n_hyper + n_mean, "Checkpoint")
        checkpoint = cls(
            variant=_require(fields, "variant"),
            dims=_ints(_require(fields, "dims")),
            tau=_floats(_require(fields, "tau"))[0],
            centroids=centroids,
            psi=payload[:n_hyper],
            mean_field=payload[n_hyper:] if n_mean else None,
            grid=grid,
            seed=_ints(_require(fields, "seed"))[0],
            log_scale=_require(fields, "log") == "1",
        )
        expected = count_parameters(checkpoint.architecture())[1]
        if expected != n_hyper:
            raise FormatError(f"Checkpoint holds {n_hyper} hyper-parameters, the architecture needs {expected}")
        return checkpoint


def encode_posterior(samples: PosteriorSamples) -> bytes:
    config = samples.config
    fields = [
        ("checkpoint", samples.checkpoint_id or "none"),
        ("chains", samples.n_chains),
        ("draws", samples.draws_per_chain),
        ("n_params", samples.draws.shape[-1]),
        ("iterations", config.iterations),
        ("burn_in", config.burn_in),
        ("thin", config.thin),
        ("step_size", float(config.step_size)),
        ("friction", float(config.friction)),
        ("minibatch", "none" if config.minibatch is None else config.minibatch),
        ("seed", config.seed),
    ]
    return encode_header(POSTERIOR_MAGIC, fields) + samples.draws.astype(_FLOAT).tobytes()


def decode_posterior(data: bytes) -> PosteriorSamples:
    fields, offset = decode_header(data, POSTERIOR_MAGIC)
    chains = _ints(_require(fields, "chains"))[0]
    draws = _ints(_require(fields, "draws"))[0]
    n_params = _ints(_require(fields, "n_params"))[0]
    minibatch = _require(fields, "minibatch")
    try:
        config = SghmcConfig(
            chains=chains,
            iterations=_ints(_require(fields, "iterations"))[0],
            burn_in=_ints(_require(fields, "burn_in"))[0],
            thin=_ints(_require(fields, "thin"))[0],
            step_size=_floats(_require(fields, "step_size"))[0],
            friction=_floats(_require(fields, "friction"))[0],
            minibatch=None if minibatch == "none" else _ints(minibatch)[0],
            seed=_ints(_require(fields, "seed"))[0],
        )
    except InvalidArgumentError as e:
        raise FormatError(f"Posterior file carries invalid sampler settings: {e}") from e
    payload = _payload(data, offset, chains * draws * n_params, "Posterior")
    checkpoint_id = _require(fields, "checkpoint")
    return PosteriorSamples(
        payload.reshape(chains, draws, n_params), "" if checkpoint_id == "none" else checkpoint_id, config
    )
