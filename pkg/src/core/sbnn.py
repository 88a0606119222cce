"""
(S)BNN prior variants.

A network maps a location ``s`` through an optional RBF embedding layer and
``L`` NTK-scaled layers ``f_l = W_l phi_{l-1} / sqrt(d_{l-1}) + b_l`` with tanh
activations between layers and a linear output. Weights and biases are drawn
by reparameterization, ``theta = mu + softplus(gamma) * eta``, from
hyper-parameters shared per layer (``L`` variants) or per parameter (``P``
variants). Spatially varying (``V``) variants expand ``mu`` and the
pre-softplus scale on the embedding basis and share one ``eta`` across all
locations.

Weight blocks are flattened row-major: weight ``(i, j)`` of a ``d_l x d_{l-1}``
matrix has index ``i * d_{l-1} + j``.
"""

import logging
import math
import numpy as np
import torch

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from src.core.autodiff import DTYPE, as_tensor
from src.core.exceptions import InvalidArgumentError, UnsupportedVariantError
from src.core.fields import FieldSampleSet
from src.core.grid import Grid, grid_locations
from src.core.linalg import softplus, softplus_inverse
from src.core.rng import SeededRng

_logger = logging.getLogger(__name__)

# Upper bound on elements of a materialized block of per-location weights.
_LOCATION_BLOCK_ELEMENTS = 2**22
_SAMPLE_CHUNK = 256


class Variant(str, Enum):
    BNN_IL = "BNN-IL"
    BNN_IP = "BNN-IP"
    SBNN_IL = "SBNN-IL"
    SBNN_IP = "SBNN-IP"
    SBNN_VL = "SBNN-VL"
    SBNN_VP = "SBNN-VP"

    @property
    def spatial(self) -> bool:
        """Whether the variant has an embedding layer."""
        return self.value.startswith("SBNN")

    @property
    def varying(self) -> bool:
        """Whether the prior varies over space."""
        return self.value.endswith(("VL", "VP"))

    @property
    def per_parameter(self) -> bool:
        return self.value.endswith("P")


@dataclass(frozen=True)
class Embedding:
    """
    Gaussian radial basis functions centred on a regular grid.

    Attributes:
        centroids (Grid): Centroid grid of the ``K`` basis functions.
        tau (float): Length scale, > 0.
    """

    centroids: Grid
    tau: float = 1.0

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise InvalidArgumentError(f"Embedding length scale must be positive, got {self.tau}")

    @property
    def K(self) -> int:
        return self.centroids.n


def rbf_embedding(s, embedding: Embedding) -> np.ndarray:
    """
    Evaluate ``exp(-(||s - xi_k|| / tau)^2)`` for every centroid ``xi_k``.

    Args:
        s: A location ``(d,)`` or a batch ``(n, d)``.
        embedding: Basis definition.

    Returns:
        np.ndarray: ``(K,)`` or ``(n, K)`` values in ``(0, 1]``.
    """
    s = np.asarray(s, dtype=np.float64)
    points = s.reshape(-1, embedding.centroids.d)
    sq = np.zeros((points.shape[0], embedding.K))
    for axis in range(points.shape[1]):
        diff = points[:, axis][:, None] - embedding.centroids.locations[axis][None, :]
        sq += diff * diff
    values = np.exp(-sq / embedding.tau**2)
    return values[0] if s.ndim == 1 else values


@dataclass(frozen=True)
class Architecture:
    """
    Layer widths, variant and embedding of a network.

    Attributes:
        variant (Variant): One of the six prior variants.
        dims (Tuple[int, ...]): ``d_0, ..., d_L`` with ``d_L = 1``.
        embedding (Optional[Embedding]): Required by SBNN variants, forbidden
            for BNN variants.
    """

    variant: Variant
    dims: Tuple[int, ...]
    embedding: Optional[Embedding] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise InvalidArgumentError(f"Need at least an input and an output width, got {self.dims}")
        if self.dims[-1] != 1:
            raise InvalidArgumentError(f"Output width must be 1, got {self.dims[-1]}")
        if self.variant.spatial:
            if self.embedding is None:
                raise InvalidArgumentError(f"{self.variant.value} needs an embedding layer")
            if self.dims[0] != self.embedding.K:
                raise InvalidArgumentError(
                    f"Input width {self.dims[0]} must equal the number of basis functions {self.embedding.K}"
                )
        elif self.embedding is not None:
            raise InvalidArgumentError(f"{self.variant.value} does not take an embedding layer")
        elif self.dims[0] not in (1, 2):
            raise InvalidArgumentError(f"BNN input width is the spatial dimension, got {self.dims[0]}")

    @property
    def L(self) -> int:
        return len(self.dims) - 1

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        """``(d_l, d_{l-1})`` for ``l = 1..L``."""
        return [(self.dims[l], self.dims[l - 1]) for l in range(1, len(self.dims))]

    @property
    def K(self) -> int:
        return self.embedding.K if self.embedding is not None else 0

    def basis(self, S) -> torch.Tensor:
        """Embedding basis ``rho(s)`` as an ``(n, K)`` tensor."""
        return as_tensor(rbf_embedding(np.asarray(S, dtype=np.float64).reshape(-1, self.embedding.centroids.d), self.embedding))

    def features(self, S) -> torch.Tensor:
        """
        Input to the first layer: the raw coordinates for BNNs, the activated
        embedding ``tanh(rho(s))`` for SBNNs.
        """
        if self.variant.spatial:
            return torch.tanh(self.basis(S))
        return as_tensor(np.asarray(S, dtype=np.float64).reshape(-1, self.dims[0]))


def build_architecture(
    variant: Union[Variant, str],
    hidden: Sequence[int],
    spatial_dim: int = 2,
    embedding: Optional[Embedding] = None,
) -> Architecture:
    """Assemble ``dims`` from the hidden widths and the input of the variant."""
    variant = Variant(variant)
    d0 = embedding.K if variant.spatial and embedding is not None else spatial_dim
    return Architecture(variant, (d0, *hidden, 1), embedding if variant.spatial else None)


def count_parameters(arch: Architecture) -> Tuple[int, int]:
    """
    Number of weights and biases, and of hyper-parameters.

    Returns:
        Tuple[int, int]: ``(sum_l d_l d_{l-1} + d_l, n_hyper)`` with ``n_hyper``
        equal to ``4L`` (IL), ``2 x`` weights and biases (IP), ``4KL`` (VL) or
        ``2K x`` weights and biases (VP).

    Example:
        >>> count_parameters(build_architecture("BNN-IL", (40, 40, 40)))
        (3441, 16)
    """
    n_weights_biases = sum(d_out * d_in + d_out for d_out, d_in in arch.layer_shapes)
    variant = arch.variant
    if variant.varying:
        n_hyper = 2 * arch.K * n_weights_biases if variant.per_parameter else 4 * arch.K * arch.L
    else:
        n_hyper = 2 * n_weights_biases if variant.per_parameter else 4 * arch.L
    return n_weights_biases, n_hyper


def block_names(variant: Variant) -> Tuple[str, str, str, str]:
    """Hyper-parameter block names of one layer, in storage order."""
    if variant.varying:
        return ("alpha_w", "beta_w", "alpha_b", "beta_b")
    return ("mu_w", "gamma_w", "mu_b", "gamma_b")


def block_shapes(arch: Architecture) -> List[Dict[str, Tuple[int, ...]]]:
    """Shape of every hyper-parameter block, per layer."""
    names = block_names(arch.variant)
    shapes = []
    for d_out, d_in in arch.layer_shapes:
        if arch.variant.varying:
            w_shape = (arch.K, d_out * d_in) if arch.variant.per_parameter else (arch.K,)
            b_shape = (arch.K, d_out) if arch.variant.per_parameter else (arch.K,)
        else:
            w_shape = (d_out, d_in) if arch.variant.per_parameter else ()
            b_shape = (d_out,) if arch.variant.per_parameter else ()
        shapes.append(dict(zip(names, (w_shape, w_shape, b_shape, b_shape))))
    return shapes


@dataclass
class HyperParams:
    """
    Prior hyper-parameters, one dictionary of blocks per layer.

    I variants hold ``mu_w, gamma_w, mu_b, gamma_b``; V variants hold the basis
    coefficients ``alpha_w, beta_w, alpha_b, beta_b``. Blocks are stored per
    layer, weights before biases, location blocks before scale blocks.

    Attributes:
        variant (Variant): Variant the blocks belong to.
        layers (List[Dict[str, torch.Tensor]]): The blocks.
    """

    variant: Variant
    layers: List[Dict[str, torch.Tensor]]

    def tensors(self) -> List[torch.Tensor]:
        """All blocks in storage order."""
        names = block_names(self.variant)
        return [layer[name] for layer in self.layers for name in names]

    @property
    def count(self) -> int:
        return sum(t.numel() for t in self.tensors())

    def flatten(self) -> np.ndarray:
        """Concatenate every block into a float64 vector in storage order."""
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([t.detach().reshape(-1).numpy() for t in self.tensors()])

    @classmethod
    def from_flat(cls, vector, arch: Architecture, requires_grad: bool = True) -> "HyperParams":
        """
        Rebuild the blocks from a flat vector in storage order.

        Raises:
            InvalidArgumentError: If the vector length is not the hyper-parameter count.
        """
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        expected = count_parameters(arch)[1]
        if vector.size != expected:
            raise InvalidArgumentError(
                f"{arch.variant.value} needs {expected} hyper-parameters, got {vector.size}"
            )
        layers, offset = [], 0
        for shapes in block_shapes(arch):
            layer = {}
            for name, shape in shapes.items():
                size = int(np.prod(shape)) if shape else 1
                layer[name] = as_tensor(vector[offset : offset + size].reshape(shape), requires_grad)
                offset += size
            layers.append(layer)
        return cls(arch.variant, layers)

    def clone(self, requires_grad: bool = True) -> "HyperParams":
        """Independent copy with fresh leaves."""
        return HyperParams(
            self.variant,
            [{name: as_tensor(t.detach(), requires_grad) for name, t in layer.items()} for layer in self.layers],
        )

    def check(self, arch: Architecture) -> None:
        """
        Raises:
            InvalidArgumentError: If the blocks do not conform to ``arch``.
        """
        if self.variant is not arch.variant or len(self.layers) != arch.L:
            raise InvalidArgumentError(
                f"Hyper-parameters for {self.variant.value} with {len(self.layers)} layers "
                f"do not match {arch.variant.value} with {arch.L} layers"
            )
        for l, (layer, shapes) in enumerate(zip(self.layers, block_shapes(arch))):
            for name, shape in shapes.items():
                if name not in layer or tuple(layer[name].shape) != shape:
                    raise InvalidArgumentError(f"Block {name} of layer {l + 1} does not have shape {shape}")


def _constant_hyperparams(arch: Architecture, fill: Dict[str, float]) -> HyperParams:
    layers = [
        {name: torch.full(shape, fill[name], dtype=DTYPE, requires_grad=True) for name, shape in shapes.items()}
        for shapes in block_shapes(arch)
    ]
    return HyperParams(arch.variant, layers)


def init_hyperparams(arch: Architecture, rng: Optional[SeededRng] = None) -> HyperParams:
    """
    Starting point for calibration: every ``mu`` zero and every ``gamma`` one
    (I variants); every ``alpha`` zero and every ``beta`` standard normal
    (V variants).
    """
    if not arch.variant.varying:
        return _constant_hyperparams(arch, {"mu_w": 0.0, "gamma_w": 1.0, "mu_b": 0.0, "gamma_b": 1.0})
    rng = rng if rng is not None else SeededRng(0)
    layers = []
    for shapes in block_shapes(arch):
        layer = {}
        for name, shape in shapes.items():
            values = rng.normal(shape) if name.startswith("beta") else np.zeros(shape)
            layer[name] = as_tensor(values, requires_grad=True)
        layers.append(layer)
    return HyperParams(arch.variant, layers)


def standard_normal_hyperparams(arch: Architecture) -> HyperParams:
    """
    Uncalibrated prior with every weight and bias standard normal.

    Raises:
        UnsupportedVariantError: For V variants.
    """
    if arch.variant.varying:
        raise UnsupportedVariantError("Standard normal priors are defined for I variants only")
    unit = float(softplus_inverse(1.0))
    return _constant_hyperparams(arch, {"mu_w": 0.0, "gamma_w": unit, "mu_b": 0.0, "gamma_b": unit})


@dataclass(frozen=True)
class ParamDraw:
    """
    A batch of ``B`` weight and bias realisations.

    I variants carry the assembled ``weights`` (``B x d_l x d_{l-1}``) and
    ``biases`` (``B x d_l``), which keep their graph to the hyper-parameters.
    V variants carry only the standard-normal draws ``eta_w``/``eta_b``; the
    location-dependent weights are formed during evaluation.
    """

    eta_w: Optional[Tuple[torch.Tensor, ...]] = None
    eta_b: Optional[Tuple[torch.Tensor, ...]] = None
    weights: Optional[Tuple[torch.Tensor, ...]] = None
    biases: Optional[Tuple[torch.Tensor, ...]] = None

    @property
    def batch(self) -> int:
        source = self.weights if self.weights is not None else self.eta_w
        return int(source[0].shape[0])

    def flatten(self) -> torch.Tensor:
        """
        ``B x P`` matrix of the assembled weights and biases, layer by layer,
        weights (row-major) before biases.
        """
        if self.weights is None:
            raise UnsupportedVariantError("Spatially varying draws have no location-free flat form")
        blocks = []
        for W, b in zip(self.weights, self.biases):
            blocks.extend([W.reshape(W.shape[0], -1), b])
        return torch.cat(blocks, dim=1)

    @classmethod
    def from_flat(cls, theta, arch: Architecture) -> "ParamDraw":
        """
        Split a ``P`` vector or ``B x P`` matrix of weights and biases into layers.

        Raises:
            UnsupportedVariantError: For V variants.
            InvalidArgumentError: If ``P`` is not the parameter count.
        """
        if arch.variant.varying:
            raise UnsupportedVariantError("Spatially varying draws have no location-free flat form")
        theta = theta if isinstance(theta, torch.Tensor) else as_tensor(theta)
        theta = theta.reshape(1, -1) if theta.dim() == 1 else theta
        expected = count_parameters(arch)[0]
        if theta.shape[1] != expected:
            raise InvalidArgumentError(f"Expected {expected} weights and biases, got {theta.shape[1]}")
        weights, biases, offset = [], [], 0
        for d_out, d_in in arch.layer_shapes:
            weights.append(theta[:, offset : offset + d_out * d_in].reshape(-1, d_out, d_in))
            offset += d_out * d_in
            biases.append(theta[:, offset : offset + d_out])
            offset += d_out
        return cls(weights=tuple(weights), biases=tuple(biases))


def sample_prior_params(
    psi: HyperParams, arch: Architecture, rng: SeededRng, n_draws: int = 1
) -> ParamDraw:
    """
    Reparameterized draw of ``n_draws`` parameter sets.

    For every layer the standard-normal ``eta`` of the weights is drawn before
    that of the biases. I variants return ``mu + softplus(gamma) * eta`` so
    gradients flow back to ``psi``; V variants keep ``eta`` only.

    Raises:
        InvalidArgumentError: If ``psi`` does not conform to ``arch``.
    """
    psi.check(arch)
    eta_w, eta_b = [], []
    for d_out, d_in in arch.layer_shapes:
        eta_w.append(as_tensor(rng.normal((n_draws, d_out, d_in))))
        eta_b.append(as_tensor(rng.normal((n_draws, d_out))))
    if arch.variant.varying:
        return ParamDraw(eta_w=tuple(eta_w), eta_b=tuple(eta_b))
    weights = tuple(
        layer["mu_w"] + softplus(layer["gamma_w"]) * eta for layer, eta in zip(psi.layers, eta_w)
    )
    biases = tuple(
        layer["mu_b"] + softplus(layer["gamma_b"]) * eta for layer, eta in zip(psi.layers, eta_b)
    )
    return ParamDraw(eta_w=tuple(eta_w), eta_b=tuple(eta_b), weights=weights, biases=biases)


def _local_prior(layer: Dict[str, torch.Tensor], basis: torch.Tensor, kind: str):
    # Location and scale of one block evaluated at every location.
    location = basis @ layer[f"alpha_{kind}"]
    scale = softplus(basis @ layer[f"beta_{kind}"])
    return location, scale


def weights_at(
    draw: ParamDraw, psi: HyperParams, arch: Architecture, layer: int, S
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Materialize the weights and biases of one layer at given locations.

    Args:
        draw: Parameter draws.
        psi: Hyper-parameters.
        arch: Architecture.
        layer: Zero-based layer index.
        S: ``n x d`` locations.

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: ``B x n x d_l x d_{l-1}`` weights and
        ``B x n x d_l`` biases.
    """
    d_out, d_in = arch.layer_shapes[layer]
    n = np.asarray(S).reshape(-1, arch.embedding.centroids.d if arch.embedding else arch.dims[0]).shape[0]
    if not arch.variant.varying:
        W = draw.weights[layer][:, None].expand(-1, n, -1, -1)
        b = draw.biases[layer][:, None].expand(-1, n, -1)
        return W, b
    basis = arch.basis(S)
    return _varying_block(draw, psi.layers[layer], basis, layer, d_out, d_in, arch.variant.per_parameter)


def _varying_block(draw, layer, basis, index, d_out, d_in, per_parameter):
    mu_w, sigma_w = _local_prior(layer, basis, "w")
    mu_b, sigma_b = _local_prior(layer, basis, "b")
    eta_w, eta_b = draw.eta_w[index], draw.eta_b[index]
    if per_parameter:
        mu_w = mu_w.reshape(-1, d_out, d_in)
        sigma_w = sigma_w.reshape(-1, d_out, d_in)
        W = mu_w[None] + sigma_w[None] * eta_w[:, None]
        b = mu_b[None] + sigma_b[None] * eta_b[:, None]
    else:
        W = mu_w[None, :, None, None] + sigma_w[None, :, None, None] * eta_w[:, None]
        b = mu_b[None, :, None] + sigma_b[None, :, None] * eta_b[:, None]
    return W, b


def _varying_layer(
    h: torch.Tensor, draw: ParamDraw, psi: HyperParams, arch: Architecture, points: np.ndarray,
    basis: torch.Tensor, index: int,
) -> torch.Tensor:
    d_out, d_in = arch.layer_shapes[index]
    layer = psi.layers[index]
    batch = draw.eta_w[index].shape[0]
    h = h.expand(batch, -1, -1)
    if not arch.variant.per_parameter:
        # W(s) = mu(s) 1 1' + sigma(s) eta, so W(s) h = mu(s) sum(h) + sigma(s) eta h.
        mu_w, sigma_w = _local_prior(layer, basis, "w")
        mu_b, sigma_b = _local_prior(layer, basis, "b")
        z = mu_w[None, :, None] * h.sum(dim=-1, keepdim=True)
        z = z + sigma_w[None, :, None] * torch.matmul(h, draw.eta_w[index].transpose(-1, -2))
        return z / math.sqrt(d_in) + mu_b[None, :, None] + sigma_b[None, :, None] * draw.eta_b[index][:, None, :]

    block = max(1, _LOCATION_BLOCK_ELEMENTS // (batch * d_out * d_in))
    outputs = []
    for start in range(0, points.shape[0], block):
        stop = start + block
        W, b = weights_at(draw, psi, arch, index, points[start:stop])
        z = torch.einsum("bsij,bsj->bsi", W, h[:, start:stop]) / math.sqrt(d_in) + b
        outputs.append(z)
    return torch.cat(outputs, dim=1)


def forward(S, draw: ParamDraw, psi: HyperParams, arch: Architecture) -> torch.Tensor:
    """
    Evaluate the network at every location for every draw.

    Each layer computes ``W phi / sqrt(d_{l-1}) + b``; hidden layers use tanh
    and the output layer is linear.

    Args:
        S: ``n x d`` locations (``(d,)`` for one location).
        draw: ``B`` parameter draws.
        psi: Hyper-parameters (used by V variants).
        arch: Architecture.

    Returns:
        torch.Tensor: ``B x n`` field values.
    """
    h = arch.features(S)[None]
    basis = arch.basis(S) if arch.variant.varying else None
    points = np.asarray(S, dtype=np.float64).reshape(h.shape[1], -1)
    for index, (d_out, d_in) in enumerate(arch.layer_shapes):
        if h.shape[-1] != d_in:
            raise InvalidArgumentError(f"Layer {index + 1} expects width {d_in}, got {h.shape[-1]}")
        if arch.variant.varying:
            z = _varying_layer(h, draw, psi, arch, points, basis, index)
        else:
            W, b = draw.weights[index], draw.biases[index]
            z = torch.matmul(h, W.transpose(-1, -2)) / math.sqrt(d_in) + b[:, None, :]
        h = torch.tanh(z) if index < arch.L - 1 else z
    return h[..., 0]


def sample_field(
    psi: HyperParams,
    arch: Architecture,
    grid: Grid,
    N: int,
    rng: SeededRng,
    taped: bool = False,
) -> Union[FieldSampleSet, torch.Tensor]:
    """
    ``N`` prior realisations of the network on the grid, one fresh draw each.

    Args:
        taped: Return an ``N x n`` tensor that keeps its graph to ``psi``
            (used by calibration) instead of a detached ``FieldSampleSet``.
    """
    if N < 1:
        raise InvalidArgumentError(f"Need at least one realisation, got N={N}")
    if taped:
        return forward(grid.points, sample_prior_params(psi, arch, rng, N), psi, arch)
    chunks = []
    with torch.no_grad():
        for start in range(0, N, _SAMPLE_CHUNK):
            size = min(_SAMPLE_CHUNK, N - start)
            draw = sample_prior_params(psi, arch, rng, size)
            chunks.append(forward(grid.points, draw, psi, arch).numpy())
    return FieldSampleSet(np.concatenate(chunks, axis=0), grid.grid_id)


def depth_flattening(
    depths: Sequence[int], grid: Grid, n_draws: int, rng: SeededRng, width: int = 40
) -> Dict[int, float]:
    """
    Mean across-grid standard deviation of sample paths of a BNN with
    standard normal priors, per depth. Deep networks of this kind produce
    flatter sample paths.
    """
    spread = {}
    for depth in depths:
        arch = build_architecture(Variant.BNN_IL, (width,) * (depth - 1), spatial_dim=grid.d)
        fields = sample_field(standard_normal_hyperparams(arch), arch, grid, n_draws, rng.stream(depth))
        spread[depth] = float(np.mean(np.std(fields.values, axis=1)))
        _logger.info("Depth %d: mean sample-path spread %.4f", depth, spread[depth])
    return spread


def centroid_embedding(bounds, dims, tau: float = 1.0) -> Embedding:
    """Embedding with centroids on the regular grid ``dims`` over ``bounds``."""
    return Embedding(grid_locations(bounds, dims), tau)
