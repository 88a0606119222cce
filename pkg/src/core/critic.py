"""
Critic network of the Wasserstein calibration.

A feed-forward network from a field of ``n`` values to a scalar, with
softplus hidden layers of the NTK form ``W phi / sqrt(d_in) + b`` and a linear
output.
"""

import math
import numpy as np
import torch
import torch.nn.functional as F

from typing import List, Optional, Sequence

from src.core.autodiff import DTYPE, as_tensor, grad_norm_wrt_input
from src.core.exceptions import InvalidArgumentError
from src.core.rng import SeededRng

DEFAULT_HIDDEN = (200, 200)


class CriticNetwork(torch.nn.Module):
    """
    Critic parameters and evaluation.

    Attributes:
        dims (List[int]): ``n, h_1, ..., h_k, 1``.
        weights (torch.nn.ParameterList): ``h_l x h_{l-1}`` matrices.
        biases (torch.nn.ParameterList): ``h_l`` vectors.
    """

    def __init__(self, n: int, hidden: Sequence[int] = DEFAULT_HIDDEN) -> None:
        super().__init__()
        if n < 1 or any(h < 1 for h in hidden):
            raise InvalidArgumentError(f"Critic widths must be positive, got input {n} and hidden {tuple(hidden)}")
        self.dims: List[int] = [int(n), *[int(h) for h in hidden], 1]
        self.weights = torch.nn.ParameterList(
            torch.nn.Parameter(torch.zeros(d_out, d_in, dtype=DTYPE))
            for d_in, d_out in zip(self.dims[:-1], self.dims[1:])
        )
        self.biases = torch.nn.ParameterList(
            torch.nn.Parameter(torch.zeros(d_out, dtype=DTYPE)) for d_out in self.dims[1:]
        )

    @property
    def n(self) -> int:
        return self.dims[0]

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """
        Critic value of one field ``(n,)`` or of each row of ``(N, n)``.
        """
        if y.shape[-1] != self.n:
            raise InvalidArgumentError(f"Critic expects fields of length {self.n}, got {y.shape[-1]}")
        h = y
        last = len(self.weights) - 1
        for index, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T / math.sqrt(W.shape[1]) + b
            if index < last:
                h = F.softplus(h)
        return h[..., 0]

    def flatten(self) -> np.ndarray:
        """All weights then biases per layer as one float64 vector."""
        return np.concatenate(
            [t.detach().reshape(-1).numpy() for W, b in zip(self.weights, self.biases) for t in (W, b)]
        )

    def load_flat(self, vector) -> "CriticNetwork":
        """Overwrite the parameters in place from a vector laid out like :meth:`flatten`."""
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        offset = 0
        with torch.no_grad():
            for W, b in zip(self.weights, self.biases):
                for t in (W, b):
                    size = t.numel()
                    if offset + size > vector.size:
                        raise InvalidArgumentError("Critic parameter vector is too short")
                    t.copy_(as_tensor(vector[offset : offset + size].reshape(t.shape)))
                    offset += size
        if offset != vector.size:
            raise InvalidArgumentError("Critic parameter vector is too long")
        return self


def critic_init(n: int, rng: SeededRng, hidden: Sequence[int] = DEFAULT_HIDDEN) -> CriticNetwork:
    """
    Critic with every weight and bias of a layer with input width ``m`` drawn
    uniformly on ``[-1/sqrt(m), 1/sqrt(m)]``, layer by layer, weights first.
    """
    critic = CriticNetwork(n, hidden)
    with torch.no_grad():
        for W, b in zip(critic.weights, critic.biases):
            bound = 1.0 / math.sqrt(W.shape[1])
            W.copy_(as_tensor(rng.uniform(-bound, bound, tuple(W.shape))))
            b.copy_(as_tensor(rng.uniform(-bound, bound, tuple(b.shape))))
    return critic


def critic_forward(y, critic: CriticNetwork) -> torch.Tensor:
    """Evaluate the critic on a field or a batch of fields."""
    return critic(y if isinstance(y, torch.Tensor) else as_tensor(y))


def critic_gradient_norms(Y_bar: torch.Tensor, critic: CriticNetwork) -> torch.Tensor:
    """``||grad_y phi(y)||`` for each row, differentiable in the critic parameters."""
    return grad_norm_wrt_input(critic, Y_bar)


def gradient_penalty(
    Y_bar: torch.Tensor, critic: CriticNetwork, zeta: float, norms: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """
    ``(zeta / N) sum_i (||grad_y phi(Y_bar_i)|| - 1)^2``.

    Args:
        Y_bar: ``N x n`` mixtures.
        critic: Critic network.
        zeta: Penalty weight, >= 0.
        norms: Precomputed gradient norms at ``Y_bar``.
    """
    if zeta < 0:
        raise InvalidArgumentError(f"Penalty weight must be nonnegative, got {zeta}")
    if norms is None:
        norms = critic_gradient_norms(Y_bar, critic)
    return zeta * torch.mean((norms - 1.0) ** 2)


def wasserstein_estimate(Y: torch.Tensor, Y_tilde: torch.Tensor, critic: CriticNetwork) -> torch.Tensor:
    """
    Mean critic gap ``(1/N) sum_i phi(Y_i) - phi(Y_tilde_i)``.

    Raises:
        InvalidArgumentError: If the batches differ in shape.
    """
    if Y.shape != Y_tilde.shape:
        raise InvalidArgumentError(f"Batches differ in shape: {tuple(Y.shape)} vs {tuple(Y_tilde.shape)}")
    return torch.mean(critic(Y) - critic(Y_tilde))


def mix_pairs(Y: torch.Tensor, Y_tilde: torch.Tensor, rng: SeededRng, delta=None) -> torch.Tensor:
    """
    Per-pair convex combination ``delta_i Y_i + (1 - delta_i) Y_tilde_i``.

    Args:
        delta: Mixing weights; drawn uniform on ``[0, 1]`` when omitted.

    Raises:
        InvalidArgumentError: If the batches differ in shape.
    """
    if Y.shape != Y_tilde.shape:
        raise InvalidArgumentError(f"Batches differ in shape: {tuple(Y.shape)} vs {tuple(Y_tilde.shape)}")
    if delta is None:
        delta = rng.uniform(0.0, 1.0, Y.shape[0])
    delta = as_tensor(delta).reshape(-1, 1)
    return delta * Y.detach() + (1.0 - delta) * Y_tilde.detach()
