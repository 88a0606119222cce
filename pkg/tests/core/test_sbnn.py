import math

import numpy as np
import pytest
import torch
from scipy import stats

from src.core.autodiff import as_tensor
from src.core.exceptions import InvalidArgumentError, UnsupportedVariantError
from src.core.linalg import softplus, softplus_inverse
from src.core.rng import SeededRng
import src.core.sbnn as sbnn
from src.core.sbnn import (
    Architecture,
    HyperParams,
    ParamDraw,
    Variant,
    build_architecture,
    centroid_embedding,
    count_parameters,
    depth_flattening,
    forward,
    init_hyperparams,
    rbf_embedding,
    sample_field,
    sample_prior_params,
    standard_normal_hyperparams,
    weights_at,
)

HIDDEN = (40, 40, 40)


def _random_psi(arch, seed=0, scale=0.5):
    count = count_parameters(arch)[1]
    return HyperParams.from_flat(scale * SeededRng(seed).normal(count), arch)


def _tiny(variant, grid):
    embedding = centroid_embedding(grid.bounds, (3, 3), tau=2.0)
    return build_architecture(variant, (3, 3), embedding=embedding)


def test_embedding_is_one_at_centroid_and_inverse_e_at_tau(full_scale_embedding):
    centroid = full_scale_embedding.centroids.points[17]
    assert rbf_embedding(centroid, full_scale_embedding)[17] == 1.0
    shifted = centroid + np.array([0.6, 0.8])
    assert rbf_embedding(shifted, full_scale_embedding)[17] == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_embedding_values_lie_in_unit_interval(full_scale_embedding):
    points = SeededRng(1).uniform(-4.0, 4.0, (1000, 2))
    values = rbf_embedding(points, full_scale_embedding)
    assert values.shape == (1000, 225)
    assert np.all(values > 0) and np.all(values <= 1)


@pytest.mark.parametrize(
    "variant, n_weights_biases, n_hyper",
    [
        ("BNN-IL", 3441, 16),
        ("BNN-IP", 3441, 6882),
        ("SBNN-IL", 12361, 16),
        ("SBNN-IP", 12361, 24722),
        ("SBNN-VL", 12361, 3600),
        ("SBNN-VP", 12361, 5562450),
    ],
)
def test_parameter_counts_at_full_scale(variant, n_weights_biases, n_hyper, full_scale_embedding):
    arch = build_architecture(variant, HIDDEN, embedding=full_scale_embedding)
    assert count_parameters(arch) == (n_weights_biases, n_hyper)


def test_architecture_validation(full_scale_embedding):
    with pytest.raises(InvalidArgumentError):
        Architecture(Variant.SBNN_IL, (225, 40, 1))
    with pytest.raises(InvalidArgumentError):
        Architecture(Variant.BNN_IL, (2, 40, 1), full_scale_embedding)
    with pytest.raises(InvalidArgumentError):
        Architecture(Variant.BNN_IL, (2, 40, 2))
    with pytest.raises(InvalidArgumentError):
        Architecture(Variant.SBNN_IL, (224, 40, 1), full_scale_embedding)


def test_hyperparams_flat_layout_round_trips(tiny_sbnn_il):
    psi = _random_psi(tiny_sbnn_il)
    assert psi.count == 12
    rebuilt = HyperParams.from_flat(psi.flatten(), tiny_sbnn_il)
    np.testing.assert_array_equal(rebuilt.flatten(), psi.flatten())
    assert float(rebuilt.layers[0]["gamma_w"]) == psi.flatten()[1]
    with pytest.raises(InvalidArgumentError):
        HyperParams.from_flat(np.zeros(11), tiny_sbnn_il)


def test_calibration_starting_point(grid_4x4):
    psi = init_hyperparams(_tiny("SBNN-IL", grid_4x4))
    np.testing.assert_array_equal(psi.flatten(), np.tile([0.0, 1.0, 0.0, 1.0], 3))
    varying = init_hyperparams(_tiny("SBNN-VL", grid_4x4), SeededRng(0))
    for layer in varying.layers:
        assert torch.all(layer["alpha_w"] == 0) and torch.all(layer["alpha_b"] == 0)
        assert layer["beta_w"].shape == (9,)
        assert torch.any(layer["beta_w"] != 0)


def test_standard_normal_prior_is_not_defined_for_varying_variants(grid_4x4):
    with pytest.raises(UnsupportedVariantError):
        standard_normal_hyperparams(_tiny("SBNN-VP", grid_4x4))


def test_degenerate_scale_returns_location(tiny_bnn_ip):
    psi = _random_psi(tiny_bnn_ip)
    for layer in psi.layers:
        layer["gamma_w"] = torch.full_like(layer["gamma_w"], -40.0)
        layer["gamma_b"] = torch.full_like(layer["gamma_b"], -40.0)
    draw = sample_prior_params(psi, tiny_bnn_ip, SeededRng(2), n_draws=5)
    for W, layer in zip(draw.weights, psi.layers):
        assert torch.max(torch.abs(W - layer["mu_w"])) <= 1e-15


def test_unit_prior_moments():
    arch = build_architecture("BNN-IL", (3,), spatial_dim=2)
    draw = sample_prior_params(standard_normal_hyperparams(arch), arch, SeededRng(3), n_draws=100_000)
    weight = draw.weights[0][:, 0, 0].detach().numpy()
    assert abs(weight.mean()) <= 0.02
    assert abs(weight.var() - 1.0) <= 0.05


def test_reparameterized_draws_follow_their_normal():
    arch = build_architecture("BNN-IL", (2,), spatial_dim=1)
    psi = HyperParams.from_flat([0.5, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], arch)
    draw = sample_prior_params(psi, arch, SeededRng(4), n_draws=10_000)
    weight = draw.weights[0][:, 1, 0].detach().numpy()
    result = stats.kstest(weight, "norm", args=(0.5, softplus(0.2)))
    assert result.pvalue > 0.01


@pytest.mark.parametrize("variant", ["SBNN-VL", "SBNN-VP"])
def test_varying_weights_are_perfectly_correlated_across_locations(variant, grid_4x4):
    arch = _tiny(variant, grid_4x4)
    psi = _random_psi(arch, seed=5)
    draw = sample_prior_params(psi, arch, SeededRng(6), n_draws=10_000)
    S = grid_4x4.points[[0, 9]]
    with torch.no_grad():
        W, _ = weights_at(draw, psi, arch, 1, S)
    corr = np.corrcoef(W[:, 0, 1, 2].numpy(), W[:, 1, 1, 2].numpy())[0, 1]
    assert corr >= 0.999


def test_sampling_rejects_mismatched_hyperparams(tiny_bnn_ip, tiny_sbnn_il):
    with pytest.raises(InvalidArgumentError):
        sample_prior_params(_random_psi(tiny_sbnn_il), tiny_bnn_ip, SeededRng(0))


def test_zero_parameters_give_zero_field(tiny_bnn_ip, grid_4x4):
    P = count_parameters(tiny_bnn_ip)[0]
    draw = ParamDraw.from_flat(np.zeros(P), tiny_bnn_ip)
    out = forward(grid_4x4.points, draw, standard_normal_hyperparams(tiny_bnn_ip), tiny_bnn_ip)
    assert torch.equal(out, torch.zeros(1, grid_4x4.n))


def test_last_bias_alone_gives_constant_field(tiny_bnn_ip, grid_4x4):
    theta = np.zeros(count_parameters(tiny_bnn_ip)[0])
    theta[-1] = 2.5
    out = forward(grid_4x4.points, ParamDraw.from_flat(theta, tiny_bnn_ip), None, tiny_bnn_ip)
    assert torch.all(out == 2.5)


def test_single_layer_network_is_scaled_linear_map():
    arch = build_architecture("BNN-IL", (), spatial_dim=2)
    assert arch.dims == (2, 1)
    w, b = np.array([0.7, -1.3]), 0.4
    points = SeededRng(7).uniform(-4, 4, (100, 2))
    out = forward(points, ParamDraw.from_flat(np.r_[w, b], arch), None, arch)
    np.testing.assert_allclose(out[0].numpy(), points @ w / math.sqrt(2.0) + b, rtol=0, atol=1e-14)


def test_forward_is_deterministic(tiny_sbnn_il, grid_4x4):
    psi = _random_psi(tiny_sbnn_il)
    draw = sample_prior_params(psi, tiny_sbnn_il, SeededRng(8), n_draws=3)
    first = forward(grid_4x4.points, draw, psi, tiny_sbnn_il)
    assert torch.equal(first, forward(grid_4x4.points, draw, psi, tiny_sbnn_il))


@pytest.mark.parametrize("variant", ["SBNN-VL", "SBNN-VP"])
def test_varying_forward_matches_materialized_weights(variant, grid_4x4):
    arch = _tiny(variant, grid_4x4)
    psi = _random_psi(arch, seed=9)
    draw = sample_prior_params(psi, arch, SeededRng(10), n_draws=4)
    S = grid_4x4.points
    h = arch.features(S).expand(4, -1, -1)
    for layer, (d_out, d_in) in enumerate(arch.layer_shapes):
        W, b = weights_at(draw, psi, arch, layer, S)
        z = torch.einsum("bnij,bnj->bni", W, h) / math.sqrt(d_in) + b
        h = torch.tanh(z) if layer < arch.L - 1 else z
    np.testing.assert_allclose(
        forward(S, draw, psi, arch).detach().numpy(), h[..., 0].detach().numpy(), atol=1e-12
    )


def test_per_parameter_forward_is_independent_of_location_blocks(grid_4x4, monkeypatch):
    arch = _tiny("SBNN-VP", grid_4x4)
    psi = _random_psi(arch, seed=11)
    draw = sample_prior_params(psi, arch, SeededRng(12), n_draws=2)
    whole = forward(grid_4x4.points, draw, psi, arch)
    monkeypatch.setattr(sbnn, "_LOCATION_BLOCK_ELEMENTS", 1)
    blocked = forward(grid_4x4.points, draw, psi, arch)
    np.testing.assert_allclose(blocked.detach().numpy(), whole.detach().numpy(), atol=1e-12)


def test_degenerate_prior_gives_constant_fields(tiny_sbnn_il, grid_4x4):
    flat = np.tile([0.0, -40.0, 0.0, -40.0], 3)
    flat[-2] = 1.75
    psi = HyperParams.from_flat(flat, tiny_sbnn_il)
    fields = sample_field(psi, tiny_sbnn_il, grid_4x4, 6, SeededRng(11))
    np.testing.assert_allclose(fields.values, 1.75, atol=1e-12)


def test_sample_field_is_reproducible(tiny_sbnn_il, grid_4x4):
    psi = _random_psi(tiny_sbnn_il)
    a = sample_field(psi, tiny_sbnn_il, grid_4x4, 300, SeededRng(12))
    b = sample_field(psi, tiny_sbnn_il, grid_4x4, 300, SeededRng(12))
    assert a.values.shape == (300, grid_4x4.n)
    assert a.grid_id == grid_4x4.grid_id
    np.testing.assert_array_equal(a.values, b.values)


@pytest.mark.parametrize("variant", ["SBNN-IL", "SBNN-IP", "SBNN-VL", "SBNN-VP"])
def test_taped_fields_carry_gradients_to_every_block(variant, grid_4x4):
    arch = _tiny(variant, grid_4x4)
    psi = _random_psi(arch, seed=13)
    fields = sample_field(psi, arch, grid_4x4, 8, SeededRng(14), taped=True)
    assert fields.shape == (8, grid_4x4.n)
    (fields**2).mean().backward()
    for tensor in psi.tensors():
        assert tensor.grad is not None and torch.any(tensor.grad != 0)


def test_unit_scale_inverse_matches_standard_prior(tiny_bnn_ip):
    psi = standard_normal_hyperparams(tiny_bnn_ip)
    assert float(psi.layers[0]["gamma_w"][0, 0]) == pytest.approx(softplus_inverse(1.0))
    assert float(psi.layers[0]["mu_b"][0]) == 0.0


def test_deep_networks_flatten_sample_paths(grid_1d):
    spread = depth_flattening([1, 8], grid_1d, 200, SeededRng(15))
    assert spread[8] < spread[1]
