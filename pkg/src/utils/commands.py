"""
Pipeline commands behind the command line.

Each command takes a RunConfig and a DataWriter, runs one stage of the
pipeline and returns the paths it wrote. Random streams are derived from the
run seed so that every command is reproducible byte for byte.
"""

import logging
import numpy as np
import pandas as pd
from pathlib import Path

from typing import Dict, Optional, Sequence, Tuple, Union

from src.core.calibration import CalibTrace, calibrate
from src.core.diagnostics import (
    anchored_covariance,
    empirical_covariogram,
    exceedance_curve,
    exceedance_frame,
    kde_1d,
)
from src.core.exceptions import ConfigError, InvalidArgumentError, UnsupportedVariantError
from src.core.fields import FieldSampleSet
from src.core.grid import Grid
from src.core.inference import kriging_oracle, predictive_field, sghmc_sample, simulate_dataset
from src.core.rng import SeededRng
from src.core.sbnn import HyperParams, init_hyperparams, sample_field
from src.core.scoring import ScoreReport, score
from src.core.targets import TargetKind, TargetSource, simulate_target
from src.utils.config import RunConfig
from src.utils.data_reader import DataReader
from src.utils.data_validation import RealisationSummary
from src.utils.data_writer import DataWriter
from src.utils.formats import Checkpoint

_logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SIMULATE_STREAM = 10
PILOT_STREAM = 11
INIT_STREAM = 12
PRIOR_STREAM = 13
DATASET_STREAM = 14
DIAGNOSE_STREAM = 15
KRIGING_STREAM = 16


def _grid_frame(grid: Grid) -> pd.DataFrame:
    return pd.DataFrame({f"s{axis + 1}": grid.locations[axis] for axis in range(grid.d)})


def _report(samples: FieldSampleSet) -> RealisationSummary:
    summary = RealisationSummary.from_samples(samples)
    print(summary.render())
    return summary


def cmd_simulate(config: RunConfig, writer: DataWriter, count: Optional[int] = None) -> Dict[str, Path]:
    """
    Write ``count`` target realisations to ``realisations.sbr`` and print a summary.

    Lognormal realisations are stored on the positive scale.
    """
    grid = config.grid.build()
    spec = config.target.build()
    if not spec.kind.is_simulable:
        raise InvalidArgumentError("External realisations cannot be simulated")
    count = count or config.simulate.count
    samples = simulate_target(spec, grid, count, SeededRng(config.seed).stream(SIMULATE_STREAM))
    path = writer.write_realisations("realisations.sbr", samples.values, grid)
    _report(samples)
    return {"realisations": path}


def cmd_calibrate(config: RunConfig, writer: DataWriter) -> Dict[str, Path]:
    """
    Calibrate the configured model to the configured target.

    Writes ``checkpoint.ckpt``, ``calibration_trace.csv``, the resolved
    ``run_config.yaml`` and, every ``checkpoint_every`` outer steps,
    ``checkpoint_<step>.ckpt``.
    """
    grid = config.grid.build()
    arch = config.model.build(grid)
    calib = config.calib_config()
    root = SeededRng(config.seed)
    source = TargetSource(
        config.target.build(),
        grid,
        center=config.target.centered,
        rng=root.stream(PILOT_STREAM),
        pilot_size=config.target.pilot_size,
    )
    psi0 = init_hyperparams(arch, root.stream(INIT_STREAM))

    def snapshot(psi: HyperParams) -> Checkpoint:
        return Checkpoint.from_hyperparams(
            psi, arch, config.seed, source.mean_field, grid, log_scale=source.log_scale
        )

    def periodic(step: int, psi: HyperParams, trace: CalibTrace) -> None:
        if calib.checkpoint_every and step % calib.checkpoint_every == 0:
            writer.write_checkpoint(f"checkpoint_{step:06d}.ckpt", snapshot(psi))
            _logger.info("Checkpoint at outer step %d", step)

    psi, trace = calibrate(psi0, arch, source, grid, calib, checkpoint=periodic)
    paths = {
        "checkpoint": writer.write_checkpoint("checkpoint.ckpt", snapshot(psi)),
        "trace": writer.write_frame("calibration_trace.csv", trace.to_frame()),
        "config": writer.write_yaml("run_config.yaml", config.to_dict()),
    }
    if len(trace):
        print(f"Trailing W1 average: {trace.trailing_average(calib.trace_window):.6f}")
    return paths


def _load_checkpoint(path: PathLike) -> Checkpoint:
    return DataReader(path).load_checkpoint()


def _prior_fields(checkpoint: Checkpoint, grid: Grid, count: int, rng: SeededRng) -> FieldSampleSet:
    arch = checkpoint.architecture()
    samples = sample_field(checkpoint.hyperparams(), arch, grid, count, rng)
    if checkpoint.mean_field is None:
        return samples
    if checkpoint.grid != grid:
        raise InvalidArgumentError("The stored mean field belongs to a different grid")
    return FieldSampleSet(samples.values + checkpoint.mean_field, grid.grid_id)


def cmd_sample_prior(
    config: RunConfig, writer: DataWriter, checkpoint: PathLike, count: Optional[int] = None
) -> Dict[str, Path]:
    """Write calibrated-prior realisations to ``prior_samples.sbr``, with the stored mean field added."""
    grid = config.grid.build()
    count = count or config.simulate.count
    samples = _prior_fields(_load_checkpoint(checkpoint), grid, count, SeededRng(config.seed).stream(PRIOR_STREAM))
    path = writer.write_realisations("prior_samples.sbr", samples.values, grid)
    _report(samples)
    return {"realisations": path}


def cmd_infer(
    config: RunConfig, writer: DataWriter, checkpoint: PathLike, dataset: Optional[PathLike] = None
) -> Dict[str, Path]:
    """
    Sample the posterior of an I-variant checkpoint given a dataset and push
    the draws through the network on the grid.

    Writes ``posterior.post``, ``predictive.csv`` (one row per grid location)
    and ``predictive_draws.sbr``.
    """
    dataset = dataset or config.inference.dataset
    if dataset is None:
        raise ConfigError("No observation dataset given")
    grid = config.grid.build()
    stored = _load_checkpoint(checkpoint)
    arch = stored.architecture()
    if arch.variant.varying:
        raise UnsupportedVariantError(f"Posterior inference is not available for {arch.variant.value}")
    if stored.mean_field is not None and stored.grid != grid:
        raise InvalidArgumentError("The stored mean field belongs to a different grid")

    inference = config.inference
    observations = DataReader(dataset).load_dataset(inference.noise_var, inference.transform)
    observations.check_domain(grid)
    if stored.mean_field is not None and stored.log_scale != (observations.transform == "log"):
        raise InvalidArgumentError(
            f"The stored mean field is on the {'log' if stored.log_scale else 'data'} scale "
            f"but the dataset transform is {observations.transform}"
        )
    sampler = inference.sampler(config.seed, config.threads or 1)
    samples = sghmc_sample(
        observations, stored.hyperparams(), arch, sampler, stored.checkpoint_id, stored.mean_field, grid
    )
    predictive = predictive_field(
        samples, grid, arch, stored.mean_field, back_transform=observations.transform == "log"
    )

    frame = _grid_frame(grid)
    frame["mean"] = predictive.mean
    frame["sd"] = predictive.sd
    return {
        "posterior": writer.write_posterior("posterior.post", samples),
        "predictive": writer.write_frame("predictive.csv", frame),
        "draws": writer.write_realisations("predictive_draws.sbr", predictive.draws, grid),
    }


def cmd_krige(
    config: RunConfig, writer: DataWriter, dataset: Optional[PathLike] = None, count: Optional[int] = None
) -> Dict[str, Path]:
    """
    Exact conditioning of the configured Gaussian-based target on a dataset.

    Writes ``kriging.csv`` and ``kriging_draws.sbr``.
    """
    dataset = dataset or config.inference.dataset
    if dataset is None:
        raise ConfigError("No observation dataset given")
    grid = config.grid.build()
    inference = config.inference
    observations = DataReader(dataset).load_dataset(inference.noise_var, inference.transform)
    spec = config.target.build()
    result = kriging_oracle(
        observations,
        spec,
        grid,
        n_draws=count or config.diagnostics.count,
        rng=SeededRng(config.seed).stream(KRIGING_STREAM),
        back_transform=observations.transform == "log",
    )
    frame = _grid_frame(grid)
    frame["mean"] = result.mean
    frame["sd"] = result.sd
    return {
        "predictive": writer.write_frame("kriging.csv", frame),
        "draws": writer.write_realisations("kriging_draws.sbr", result.draws, grid),
    }


def _diagnosis_input(config: RunConfig, path: PathLike, rng: SeededRng):
    reader = DataReader(path)
    if reader.detected_format == "ckpt":
        grid = config.grid.build()
        return _prior_fields(reader.load_checkpoint(), grid, config.diagnostics.count, rng), grid
    realisations = reader.load_realisations()
    return realisations.samples, realisations.grid


def cmd_diagnose(config: RunConfig, writer: DataWriter, inputs: Sequence[PathLike]) -> Dict[str, Path]:
    """
    Diagnostic tables for realisation files or checkpoints (prior draws).

    Per input ``<stem>``: ``covariogram_<stem>.csv`` always, and
    ``anchored_<stem>.csv``, ``kde_<stem>.csv`` and ``exceedance_<stem>.csv``
    when anchors, density locations or exceedance curves are configured.
    """
    options = config.diagnostics
    root = SeededRng(config.seed).stream(DIAGNOSE_STREAM)
    paths = {}
    for index, path in enumerate(inputs):
        stem = Path(path).stem
        samples, grid = _diagnosis_input(config, path, root.stream(2 * index))
        pairs_rng = root.stream(2 * index + 1)
        covariogram = empirical_covariogram(samples, grid, options.n_bins, options.max_pairs, pairs_rng)
        paths[f"covariogram_{stem}"] = writer.write_frame(f"covariogram_{stem}.csv", covariogram.to_frame())

        if options.anchors:
            maps = anchored_covariance(samples, grid, options.anchors)
            paths[f"anchored_{stem}"] = writer.write_frame(f"anchored_{stem}.csv", maps.to_frame(grid))
        if options.kde_locations:
            frames = []
            for location_id, location in enumerate(options.kde_locations):
                kde = kde_1d(samples.values[:, grid.index_of(location)], options.bandwidth)
                frame = kde.to_frame()
                frame.insert(0, "location_id", location_id)
                frames.append(frame)
            paths[f"kde_{stem}"] = writer.write_frame(f"kde_{stem}.csv", pd.concat(frames, ignore_index=True))
        if options.exceedance:
            curves = exceedance_curve(
                samples, grid, options.quantiles, options.n_bins, options.max_pairs, pairs_rng, log=options.log
            )
            paths[f"exceedance_{stem}"] = writer.write_frame(f"exceedance_{stem}.csv", exceedance_frame(curves))
    return paths


def _truth_values(truth: PathLike, grid: Grid) -> Tuple[Optional[np.ndarray], np.ndarray]:
    reader = DataReader(truth)
    if reader.detected_format == "sbr":
        realisations = reader.load_realisations()
        if realisations.grid != grid:
            raise InvalidArgumentError("Truth and predictive draws are on different grids")
        return None, realisations.samples.values[0]
    frame = reader.load_data()
    if "value" not in frame.columns:
        raise InvalidArgumentError("Truth table needs a value column")
    columns = [f"s{axis + 1}" for axis in range(grid.d)]
    indices = np.array([grid.index_of(row) for row in frame[columns].to_numpy(np.float64)], dtype=int)
    return indices, frame["value"].to_numpy(np.float64)


def cmd_score(config: RunConfig, writer: DataWriter, draws: PathLike, truth: PathLike) -> ScoreReport:
    """
    Score predictive draws (``.sbr``) against a truth field (``.sbr``, first
    record) or a truth table (CSV ``s1[,s2],value``). Writes ``scores.csv``.
    """
    predictive = DataReader(draws).load_realisations()
    indices, values = _truth_values(truth, predictive.grid)
    draw_matrix = predictive.samples.values.T
    if indices is not None:
        draw_matrix = draw_matrix[indices]
    report = score(draw_matrix, values)
    writer.write_frame("scores.csv", report.to_frame())
    print(report.to_frame().to_string(index=False))
    return report


def cmd_make_dataset(
    config: RunConfig, writer: DataWriter, observations: Optional[int] = None
) -> Dict[str, Path]:
    """
    Observe one simulated target realisation with noise.

    Writes ``dataset.csv`` (``s1[,s2],value``) and the full realisation to
    ``truth.sbr`` on the data scale.
    """
    grid = config.grid.build()
    spec = config.target.build()
    if not spec.kind.is_simulable:
        raise InvalidArgumentError("Datasets are simulated from Gaussian-based targets only")
    inference = config.inference
    transform = inference.transform
    if spec.kind is TargetKind.LOGNORMAL_MATERN32:
        transform = "log"
    simulated = simulate_dataset(
        spec,
        grid,
        observations or inference.observations,
        inference.noise_var,
        SeededRng(config.seed).stream(DATASET_STREAM),
        transform,
    )
    dataset = simulated.dataset
    frame = pd.DataFrame({f"s{axis + 1}": dataset.locations[:, axis] for axis in range(grid.d)})
    frame["value"] = dataset.values
    return {
        "dataset": writer.write_frame("dataset.csv", frame),
        "truth": writer.write_realisations("truth.sbr", simulated.truth[None, :], grid),
    }
