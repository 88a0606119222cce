"""
Reverse-mode differentiation helpers on top of ``torch.autograd``.

``Tape`` registers named leaf parameter blocks and returns gradients for them,
filling exact zeros for blocks the objective never touched. ``grad_norm_wrt_input``
returns input-gradient norms that stay differentiable in the network parameters,
which the gradient penalty needs. ``finite_difference_gradient`` is the central
difference oracle used by the gradient checks.
"""

import logging
import numpy as np
import torch

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

from src.core.exceptions import InvalidArgumentError

_logger = logging.getLogger(__name__)

DTYPE = torch.float64


def as_tensor(value, requires_grad: bool = False) -> torch.Tensor:
    """Copy ``value`` into a float64 tensor."""
    if isinstance(value, torch.Tensor):
        tensor = value.to(DTYPE)
    else:
        tensor = torch.tensor(np.array(value, dtype=np.float64), dtype=DTYPE)
    if requires_grad:
        tensor = tensor.detach().clone().requires_grad_(True)
    return tensor


def grad(
    objective: torch.Tensor,
    leaves: Sequence[torch.Tensor],
    create_graph: bool = False,
    retain_graph: Optional[bool] = None,
) -> List[torch.Tensor]:
    """
    Gradient of a scalar objective with respect to each leaf.

    Leaves the objective does not depend on receive exact zeros.

    Args:
        objective: Scalar produced by a forward pass over the leaves.
        leaves: Tensors with ``requires_grad=True``.
        create_graph: Keep the graph of the gradient for a nested backward pass.
        retain_graph: Keep the forward graph alive afterwards.

    Returns:
        List[torch.Tensor]: One gradient per leaf, same shapes.

    Raises:
        InvalidArgumentError: If the objective is not a scalar or a leaf does
            not track gradients.
    """
    if objective.numel() != 1:
        raise InvalidArgumentError(f"Objective must be a scalar, got shape {tuple(objective.shape)}")
    leaves = list(leaves)
    for index, leaf in enumerate(leaves):
        if not isinstance(leaf, torch.Tensor) or not leaf.requires_grad:
            raise InvalidArgumentError(f"Leaf {index} is not registered for differentiation")
    if not objective.requires_grad:
        return [torch.zeros_like(leaf) for leaf in leaves]
    gradients = torch.autograd.grad(
        objective.reshape(()),
        leaves,
        create_graph=create_graph,
        retain_graph=retain_graph,
        allow_unused=True,
    )
    return [torch.zeros_like(leaf) if g is None else g for leaf, g in zip(leaves, gradients)]


class Tape:
    """
    Named registry of leaf parameter blocks.

    Each ``watch`` returns a fresh leaf tensor; forward passes are recorded by
    torch as they run, and ``gradient`` sweeps backward once. The registry can
    be reused for another forward pass afterwards.

    Example:
        >>> tape = Tape()
        >>> x = tape.watch("x", 3.0)
        >>> tape.gradient(x * x)["x"]
        tensor(6., dtype=torch.float64)
    """

    def __init__(self) -> None:
        self._leaves: Dict[str, torch.Tensor] = {}

    def watch(self, name: str, value) -> torch.Tensor:
        """Register ``value`` under ``name`` and return the leaf tensor."""
        leaf = as_tensor(value, requires_grad=True)
        self._leaves[name] = leaf
        return leaf

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._leaves[name]

    @property
    def names(self) -> List[str]:
        return list(self._leaves)

    def gradient(
        self,
        objective: torch.Tensor,
        names: Optional[Iterable[str]] = None,
        create_graph: bool = False,
    ) -> Dict[str, torch.Tensor]:
        """
        Adjoint of every requested leaf.

        Raises:
            InvalidArgumentError: If a requested name was never watched.
        """
        names = list(self._leaves) if names is None else list(names)
        unknown = [name for name in names if name not in self._leaves]
        if unknown:
            raise InvalidArgumentError(f"Leaves not registered on the tape: {unknown}")
        gradients = grad(objective, [self._leaves[name] for name in names], create_graph=create_graph)
        return dict(zip(names, gradients))


def grad_norm_wrt_input(
    phi: Callable[[torch.Tensor], torch.Tensor], y: torch.Tensor
) -> torch.Tensor:
    """
    Euclidean norm of ``d phi / d y`` for each row of ``y``.

    ``phi`` maps a ``(N, n)`` batch to ``N`` scalars (rows are independent) or
    an ``(n,)`` vector to one scalar. The returned norms keep their graph, so
    they can be differentiated again with respect to the parameters of ``phi``.

    Args:
        phi: Scalar-valued function of an ``n``-vector, applied row-wise.
        y: Evaluation points, ``(n,)`` or ``(N, n)``.

    Returns:
        torch.Tensor: Scalar or ``(N,)`` gradient norms.
    """
    point = y.detach().clone().requires_grad_(True)
    value = phi(point)
    if not value.requires_grad:
        return torch.zeros(point.shape[:-1], dtype=point.dtype)
    (gradient,) = torch.autograd.grad(value.sum(), point, create_graph=True, allow_unused=True)
    if gradient is None:
        return torch.zeros(point.shape[:-1], dtype=point.dtype)
    return torch.linalg.vector_norm(gradient, dim=-1)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], x: Union[np.ndarray, Sequence[float]], step: float = 1e-5
) -> np.ndarray:
    """
    Central finite-difference gradient of a scalar function.

    Args:
        f: Function of a flat float64 vector.
        x: Evaluation point.
        step: Perturbation size.

    Returns:
        np.ndarray: Gradient estimate with the shape of ``x``.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    estimate = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = float(f(x))
        flat[i] = original - step
        lower = float(f(x))
        flat[i] = original
        estimate[i] = (upper - lower) / (2.0 * step)
    return estimate.reshape(x.shape)
