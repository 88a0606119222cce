import itertools

import numpy as np
import pytest
import torch

from src.core.autodiff import as_tensor, finite_difference_gradient, grad
from src.core.calibration import (
    CalibConfig,
    CalibStreams,
    CalibTrace,
    calibrate,
    inner_loop,
    outer_step,
)
from src.core.critic import critic_init, wasserstein_estimate
from src.core.exceptions import CheckpointIOError, InvalidArgumentError, NumericalFailureError
from src.core.grid import grid_locations
from src.core.rng import SeededRng
from src.core.sbnn import HyperParams, build_architecture, count_parameters, init_hyperparams, sample_field
from src.core.targets import TargetSource, TargetSpec


@pytest.fixture
def source(grid_4x4):
    return TargetSource(TargetSpec(length_scale=2.0), grid_4x4)


def _config(**overrides):
    settings = dict(N=8, inner_steps=3, outer_steps=2, critic_hidden=(6, 6), record_time=False, log_every=0)
    settings.update(overrides)
    return CalibConfig(**settings)


class _NonFiniteSource:
    def draw(self, N, rng):
        return np.full((N, 16), np.inf)


class _RecordingSource:
    def __init__(self, source):
        self.source = source
        self.batches = []

    def draw(self, N, rng):
        batch = self.source.draw(N, rng)
        self.batches.append(batch)
        return batch


def _all_distinct(batches):
    return all(not np.array_equal(a, b) for a, b in itertools.combinations(batches, 2))


@pytest.mark.parametrize(
    "overrides",
    [dict(N=1), dict(zeta=-1.0), dict(inner_lr=0.0), dict(outer_lr=-0.1), dict(rms_decay=1.0), dict(trace_window=0)],
)
def test_config_validation(overrides):
    with pytest.raises(InvalidArgumentError):
        _config(**overrides)


def test_zero_inner_steps_leave_critic_unchanged(tiny_sbnn_il, grid_4x4, source):
    config = _config(inner_steps=0)
    critic = critic_init(grid_4x4.n, SeededRng(0), config.critic_hidden)
    before = critic.flatten()
    result = inner_loop(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, critic, source, grid_4x4, config, CalibStreams.from_seed(0))
    np.testing.assert_array_equal(result.critic.flatten(), before)
    assert result.objectives == []
    assert result.grad_norm_mean == result.grad_norm_initial


def test_inner_loop_is_reproducible(tiny_sbnn_il, grid_4x4, source):
    config = _config(inner_steps=5)
    flats = []
    for _ in range(2):
        critic = critic_init(grid_4x4.n, SeededRng(0), config.critic_hidden)
        inner_loop(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, critic, source, grid_4x4, config, CalibStreams.from_seed(3))
        flats.append(critic.flatten())
    np.testing.assert_array_equal(flats[0], flats[1])


def test_large_penalty_pulls_gradient_norms_towards_one(tiny_sbnn_il, grid_4x4, source):
    config = _config(N=32, inner_steps=50, zeta=1e6, critic_hidden=(20, 20))
    critic = critic_init(grid_4x4.n, SeededRng(1), config.critic_hidden)
    result = inner_loop(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, critic, source, grid_4x4, config, CalibStreams.from_seed(1))
    assert abs(result.grad_norm_mean - 1.0) < abs(result.grad_norm_initial - 1.0)


def test_inner_objective_rises_in_most_trials(tiny_sbnn_il, grid_4x4, source):
    config = _config(N=16, inner_steps=50, critic_hidden=(10, 10))
    psi = init_hyperparams(tiny_sbnn_il)
    rising = 0
    for trial in range(10):
        critic = critic_init(grid_4x4.n, SeededRng(100 + trial), config.critic_hidden)
        result = inner_loop(psi, tiny_sbnn_il, critic, source, grid_4x4, config, CalibStreams.from_seed(trial))
        rising += result.objectives[-1] >= result.objectives[0]
    assert rising >= 9


def test_non_finite_objective_reports_step(tiny_sbnn_il, grid_4x4):
    config = _config()
    critic = critic_init(grid_4x4.n, SeededRng(0), config.critic_hidden)
    with pytest.raises(NumericalFailureError) as info:
        inner_loop(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, critic, _NonFiniteSource(), grid_4x4, config, CalibStreams.from_seed(0))
    assert info.value.step == 0


def test_zero_outer_rate_keeps_hyperparams(tiny_sbnn_il, grid_4x4, source):
    config = _config(outer_lr=0.0)
    psi = init_hyperparams(tiny_sbnn_il)
    before = psi.flatten()
    critic = critic_init(grid_4x4.n, SeededRng(0), config.critic_hidden)
    psi, estimate = outer_step(psi, tiny_sbnn_il, critic, source, grid_4x4, config, CalibStreams.from_seed(0))
    np.testing.assert_array_equal(psi.flatten(), before)
    assert np.isfinite(estimate)


def test_outer_step_moves_hyperparams(tiny_sbnn_il, grid_4x4, source):
    config = _config()
    psi = init_hyperparams(tiny_sbnn_il)
    before = psi.flatten()
    critic = critic_init(grid_4x4.n, SeededRng(0), config.critic_hidden)
    psi, _ = outer_step(psi, tiny_sbnn_il, critic, source, grid_4x4, config, CalibStreams.from_seed(0))
    assert not np.array_equal(psi.flatten(), before)


def test_each_outer_step_consumes_a_fresh_batch(tiny_sbnn_il, grid_4x4, source):
    config = _config()
    recording = _RecordingSource(source)
    psi = init_hyperparams(tiny_sbnn_il)
    critic = critic_init(grid_4x4.n, SeededRng(0), config.critic_hidden)
    streams = CalibStreams.from_seed(4)
    per_step = 2 * len(tiny_sbnn_il.layer_shapes)
    for step in range(1, 4):
        psi, _ = outer_step(psi, tiny_sbnn_il, critic, recording, grid_4x4, config, streams)
        assert streams.target.draws == step
        assert streams.generator.draws == step * per_step
    assert len(recording.batches) == 3
    assert _all_distinct(recording.batches)


def test_calibration_never_reuses_target_batches(tiny_sbnn_il, grid_4x4, source):
    recording = _RecordingSource(source)
    calibrate(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, recording, grid_4x4, _config(outer_steps=3))
    assert len(recording.batches) == 6
    assert _all_distinct(recording.batches)


def test_target_term_has_no_hyperparameter_gradient(tiny_sbnn_il, grid_4x4, source):
    psi = init_hyperparams(tiny_sbnn_il)
    critic = critic_init(grid_4x4.n, SeededRng(0), (6, 6))
    target_term = critic(as_tensor(source.draw(8, SeededRng(2)))).mean()
    for gradient in grad(target_term, psi.tensors()):
        assert torch.equal(gradient, torch.zeros_like(gradient))


def test_hyperparameter_gradient_matches_finite_differences():
    grid = grid_locations([(-1.0, 1.0), (-1.0, 1.0)], (2, 2))
    arch = build_architecture("BNN-IP", (3,), spatial_dim=2)
    critic = critic_init(grid.n, SeededRng(4), (5, 5))
    Y_tilde = as_tensor(SeededRng(5).normal((8, grid.n)))
    flat = 0.3 * SeededRng(6).normal(count_parameters(arch)[1])

    def estimate(psi):
        Y = sample_field(psi, arch, grid, 8, SeededRng(7), taped=True)
        return wasserstein_estimate(Y, Y_tilde, critic)

    psi = HyperParams.from_flat(flat, arch)
    gradients = grad(estimate(psi), psi.tensors())
    actual = np.concatenate([g.detach().numpy().reshape(-1) for g in gradients])
    expected = finite_difference_gradient(
        lambda v: float(estimate(HyperParams.from_flat(v, arch, requires_grad=False)).detach()), flat
    )
    assert actual.size == 26
    np.testing.assert_allclose(actual, expected, rtol=1e-4, atol=1e-9)


def test_calibrate_without_outer_steps_returns_start(tiny_sbnn_il, grid_4x4, source):
    psi0 = init_hyperparams(tiny_sbnn_il)
    psi, trace = calibrate(psi0, tiny_sbnn_il, source, grid_4x4, _config(outer_steps=0))
    np.testing.assert_array_equal(psi.flatten(), psi0.flatten())
    assert len(trace) == 0
    assert np.isnan(trace.trailing_average())


def test_calibrate_is_reproducible(tiny_sbnn_il, grid_4x4, source):
    runs = [calibrate(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, source, grid_4x4, _config(seed=9)) for _ in range(2)]
    (psi_a, trace_a), (psi_b, trace_b) = runs
    np.testing.assert_array_equal(psi_a.flatten(), psi_b.flatten())
    assert trace_a.to_frame().equals(trace_b.to_frame())
    assert len(trace_a) == 2


def test_calibrate_leaves_start_untouched(tiny_sbnn_il, grid_4x4, source):
    psi0 = init_hyperparams(tiny_sbnn_il)
    before = psi0.flatten()
    calibrate(psi0, tiny_sbnn_il, source, grid_4x4, _config())
    np.testing.assert_array_equal(psi0.flatten(), before)


def test_checkpoints_follow_cadence(tiny_sbnn_il, grid_4x4, source):
    steps = []
    calibrate(
        init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, source, grid_4x4,
        _config(inner_steps=1, outer_steps=5, checkpoint_every=2),
        checkpoint=lambda step, psi, trace: steps.append((step, len(trace))),
    )
    assert steps == [(2, 2), (4, 4), (5, 5)]


def test_checkpoint_write_failure_is_io_error(tiny_sbnn_il, grid_4x4, source):
    def fail(step, psi, trace):
        raise PermissionError("read-only")

    with pytest.raises(CheckpointIOError):
        calibrate(init_hyperparams(tiny_sbnn_il), tiny_sbnn_il, source, grid_4x4, _config(inner_steps=1), checkpoint=fail)


def test_trace_frame_and_trailing_average():
    trace = CalibTrace()
    for step, estimate in enumerate([4.0, 3.0, 2.0, 1.0], start=1):
        trace.append(step, estimate, 0.9, 0.0)
    assert trace.trailing_average(2) == 1.5
    frame = trace.to_frame()
    assert list(frame.columns) == ["outer_step", "w1_estimate", "grad_norm_mean", "seconds"]
    assert frame["outer_step"].tolist() == [1, 2, 3, 4]
