"""
Wasserstein calibration of (S)BNN prior hyper-parameters.

Each outer iteration first fits the critic for ``inner_steps`` Adagrad ascent
steps on one batch of network fields, target fields and their mixtures, then
takes a single RMSprop descent step on the hyper-parameters using a fresh
batch. Both optimizers keep their state across iterations.
"""

import logging
import math
import time
import numpy as np
import pandas as pd
import torch

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

from src.core.autodiff import as_tensor, grad
from src.core.critic import (
    DEFAULT_HIDDEN,
    CriticNetwork,
    critic_gradient_norms,
    critic_init,
    gradient_penalty,
    mix_pairs,
    wasserstein_estimate,
)
from src.core.exceptions import CheckpointIOError, InvalidArgumentError, NumericalFailureError
from src.core.grid import Grid
from src.core.rng import SeededRng
from src.core.sbnn import Architecture, HyperParams, sample_field
from src.core.targets import TargetSource

_logger = logging.getLogger(__name__)

CRITIC_STREAM, GENERATOR_STREAM, TARGET_STREAM, MIX_STREAM = 0, 1, 2, 3


@dataclass(frozen=True)
class CalibConfig:
    """
    Settings of a calibration run.

    Attributes:
        N (int): Monte Carlo batch size, >= 2.
        inner_steps (int): Critic ascent steps per outer iteration.
        outer_steps (int): Number of outer iterations.
        zeta (float): Gradient penalty weight.
        inner_lr (float): Adagrad step size.
        outer_lr (float): RMSprop step size; zero freezes the hyper-parameters.
        rms_decay (float): RMSprop smoothing constant.
        rms_eps (float): RMSprop denominator offset.
        seed (int): Root seed of the run.
        trace_window (int): Window of the reported trailing average.
        critic_hidden (Tuple[int, ...]): Critic hidden widths.
        checkpoint_every (int): Checkpoint cadence in outer steps, 0 disables.
        log_every (int): Progress log cadence in outer steps.
        record_time (bool): Store wall time per step in the trace; when off the
            trace is fully reproducible.
    """

    N: int = 1024
    inner_steps: int = 50
    outer_steps: int = 1000
    zeta: float = 10.0
    inner_lr: float = 0.01
    outer_lr: float = 0.001
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    seed: int = 0
    trace_window: int = 100
    critic_hidden: Tuple[int, ...] = DEFAULT_HIDDEN
    checkpoint_every: int = 0
    log_every: int = 10
    record_time: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "critic_hidden", tuple(int(h) for h in self.critic_hidden))
        if self.N < 2:
            raise InvalidArgumentError(f"Batch size must be at least 2, got {self.N}")
        if self.inner_steps < 0 or self.outer_steps < 0:
            raise InvalidArgumentError("Step counts must be nonnegative")
        if self.zeta < 0:
            raise InvalidArgumentError(f"Penalty weight must be nonnegative, got {self.zeta}")
        if not self.inner_lr > 0 or self.outer_lr < 0:
            raise InvalidArgumentError(
                f"Step sizes must be positive, got inner {self.inner_lr} and outer {self.outer_lr}"
            )
        if not 0 < self.rms_decay < 1 or not self.rms_eps > 0:
            raise InvalidArgumentError("RMSprop decay must lie in (0, 1) and epsilon must be positive")
        if self.trace_window < 1 or self.checkpoint_every < 0 or self.log_every < 0:
            raise InvalidArgumentError("Window and cadences must be nonnegative, window at least 1")


@dataclass
class CalibTrace:
    """Per outer step: W1 estimate, mean critic gradient norm at the mixtures and wall time."""

    outer_step: List[int] = field(default_factory=list)
    w1_estimate: List[float] = field(default_factory=list)
    grad_norm_mean: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)

    def append(self, step: int, estimate: float, grad_norm: float, seconds: float) -> None:
        self.outer_step.append(step)
        self.w1_estimate.append(estimate)
        self.grad_norm_mean.append(grad_norm)
        self.seconds.append(seconds)

    def __len__(self) -> int:
        return len(self.outer_step)

    def trailing_average(self, window: int = 100) -> float:
        """Mean W1 estimate over the last ``window`` steps (NaN when empty)."""
        if not self.w1_estimate:
            return float("nan")
        return float(np.mean(self.w1_estimate[-window:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "outer_step": self.outer_step,
                "w1_estimate": self.w1_estimate,
                "grad_norm_mean": self.grad_norm_mean,
                "seconds": self.seconds,
            }
        )


@dataclass
class CalibStreams:
    """Independent random streams of the calibration roles."""

    generator: SeededRng
    target: SeededRng
    mix: SeededRng

    @classmethod
    def from_seed(cls, seed: int) -> "CalibStreams":
        root = SeededRng(seed)
        return cls(root.stream(GENERATOR_STREAM), root.stream(TARGET_STREAM), root.stream(MIX_STREAM))


@dataclass
class InnerLoopResult:
    critic: CriticNetwork
    grad_norm_initial: float
    grad_norm_mean: float
    objectives: List[float]


def _critic_optimizer(critic: CriticNetwork, config: CalibConfig) -> torch.optim.Optimizer:
    return torch.optim.Adagrad(critic.parameters(), lr=config.inner_lr, maximize=True)


def _psi_optimizer(psi: HyperParams, config: CalibConfig) -> torch.optim.Optimizer:
    return torch.optim.RMSprop(
        psi.tensors(), lr=config.outer_lr, alpha=config.rms_decay, eps=config.rms_eps
    )


def inner_loop(
    psi: HyperParams,
    arch: Architecture,
    critic: CriticNetwork,
    source: TargetSource,
    grid: Grid,
    config: CalibConfig,
    streams: CalibStreams,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> InnerLoopResult:
    """
    Fit the critic with ``psi`` held fixed.

    One batch of ``N`` network fields, ``N`` target fields and their mixtures
    is drawn on entry and reused by every ascent step on
    ``gap - penalty``.

    Raises:
        NumericalFailureError: If the objective is not finite, with the step index.
    """
    Y = as_tensor(sample_field(psi, arch, grid, config.N, streams.generator).values)
    Y_tilde = as_tensor(source.draw(config.N, streams.target))
    Y_bar = mix_pairs(Y, Y_tilde, streams.mix)
    optimizer = optimizer if optimizer is not None else _critic_optimizer(critic, config)

    initial = float(critic_gradient_norms(Y_bar, critic).mean().detach())
    objectives = []
    for step in range(config.inner_steps):
        optimizer.zero_grad()
        norms = critic_gradient_norms(Y_bar, critic)
        objective = wasserstein_estimate(Y, Y_tilde, critic) - gradient_penalty(
            Y_bar, critic, config.zeta, norms
        )
        if not torch.isfinite(objective):
            raise NumericalFailureError(f"Critic objective is not finite at inner step {step}", step=step)
        objective.backward()
        optimizer.step()
        objectives.append(float(objective.detach()))
    final = float(critic_gradient_norms(Y_bar, critic).mean().detach()) if config.inner_steps else initial
    return InnerLoopResult(critic, initial, final, objectives)


def outer_step(
    psi: HyperParams,
    arch: Architecture,
    critic: CriticNetwork,
    source: TargetSource,
    grid: Grid,
    config: CalibConfig,
    streams: CalibStreams,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> Tuple[HyperParams, float]:
    """
    One RMSprop descent step on the W1 estimate of a fresh batch, with the
    critic held fixed. Gradients reach ``psi`` through the reparameterized
    network fields only.

    Raises:
        NumericalFailureError: If the estimate or a gradient is not finite.
    """
    Y = sample_field(psi, arch, grid, config.N, streams.generator, taped=True)
    Y_tilde = as_tensor(source.draw(config.N, streams.target))
    estimate = wasserstein_estimate(Y, Y_tilde, critic)
    if not torch.isfinite(estimate):
        raise NumericalFailureError("W1 estimate is not finite")

    leaves = psi.tensors()
    gradients = grad(estimate, leaves)
    if not all(torch.all(torch.isfinite(g)) for g in gradients):
        raise NumericalFailureError("Hyper-parameter gradient is not finite")
    optimizer = optimizer if optimizer is not None else _psi_optimizer(psi, config)
    optimizer.zero_grad()
    for leaf, gradient in zip(leaves, gradients):
        leaf.grad = gradient.detach()
    optimizer.step()
    return psi, float(estimate.detach())


CheckpointCallback = Callable[[int, HyperParams, CalibTrace], None]


def calibrate(
    psi0: HyperParams,
    arch: Architecture,
    source: TargetSource,
    grid: Grid,
    config: CalibConfig,
    checkpoint: Optional[CheckpointCallback] = None,
) -> Tuple[HyperParams, CalibTrace]:
    """
    Alternate critic fitting and hyper-parameter descent for ``outer_steps``
    iterations, each stage starting from the latest critic and hyper-parameters.

    Args:
        psi0: Initial hyper-parameters; left untouched.
        arch: Network architecture.
        source: Target batches.
        grid: Calibration grid.
        config: Run settings.
        checkpoint: Called as ``checkpoint(step, psi, trace)`` every
            ``checkpoint_every`` steps and after the final step.

    Returns:
        Tuple[HyperParams, CalibTrace]: Calibrated hyper-parameters and the trace.

    Raises:
        CheckpointIOError: If a checkpoint cannot be written.
    """
    psi0.check(arch)
    psi = psi0.clone()
    trace = CalibTrace()
    if config.outer_steps == 0:
        return psi, trace

    streams = CalibStreams.from_seed(config.seed)
    critic = critic_init(grid.n, SeededRng(config.seed).stream(CRITIC_STREAM), config.critic_hidden)
    critic_optimizer = _critic_optimizer(critic, config)
    psi_optimizer = _psi_optimizer(psi, config)
    _logger.info(
        "Calibrating %s on %s: %d outer steps, N=%d, %d inner steps",
        arch.variant.value,
        grid.grid_id,
        config.outer_steps,
        config.N,
        config.inner_steps,
    )

    for step in range(1, config.outer_steps + 1):
        started = time.perf_counter()
        inner = inner_loop(psi, arch, critic, source, grid, config, streams, critic_optimizer)
        try:
            psi, estimate = outer_step(psi, arch, critic, source, grid, config, streams, psi_optimizer)
        except NumericalFailureError as e:
            e.step = step
            raise
        seconds = time.perf_counter() - started if config.record_time else 0.0
        trace.append(step, estimate, inner.grad_norm_mean, seconds)

        if config.log_every and step % config.log_every == 0:
            _logger.info(
                "Outer step %d: W1 %.5f, critic grad norm %.4f", step, estimate, inner.grad_norm_mean
            )
        due = config.checkpoint_every and step % config.checkpoint_every == 0
        if checkpoint is not None and (due or step == config.outer_steps):
            try:
                checkpoint(step, psi, trace)
            except CheckpointIOError:
                raise
            except OSError as e:
                raise CheckpointIOError(f"Failed to write checkpoint at outer step {step}: {e}") from e

    average = trace.trailing_average(config.trace_window)
    if math.isfinite(average):
        _logger.info("Trailing W1 average over %d steps: %.5f", min(config.trace_window, len(trace)), average)
    return psi, trace
