import math

import numpy as np
import pytest
import torch
from scipy import stats

from src.core.autodiff import as_tensor, finite_difference_gradient, grad
from src.core.critic import (
    CriticNetwork,
    critic_forward,
    critic_init,
    gradient_penalty,
    mix_pairs,
    wasserstein_estimate,
)
from src.core.exceptions import InvalidArgumentError
from src.core.rng import SeededRng


def test_init_respects_layer_bounds():
    critic = critic_init(4, SeededRng(0), hidden=(9, 16))
    for W, b, bound in zip(critic.weights, critic.biases, (0.5, 1 / 3, 0.25)):
        assert torch.all(W.abs() <= bound) and torch.all(b.abs() <= bound)


def test_init_is_reproducible():
    a = critic_init(6, SeededRng(1), hidden=(5, 5)).flatten()
    b = critic_init(6, SeededRng(1), hidden=(5, 5)).flatten()
    np.testing.assert_array_equal(a, b)


def test_init_is_uniform_on_width_200_layer():
    critic = critic_init(3, SeededRng(2), hidden=(200, 500))
    entries = critic.weights[1].detach().numpy().reshape(-1)
    bound = 1 / math.sqrt(200)
    assert entries.size == 100_000
    assert stats.kstest(entries, "uniform", args=(-bound, 2 * bound)).pvalue > 0.01


def test_zero_critic_outputs_final_bias():
    critic = CriticNetwork(5, hidden=(4, 4))
    assert float(critic_forward(np.arange(5.0), critic)) == 0.0
    with torch.no_grad():
        critic.biases[-1].fill_(0.3)
    assert float(critic_forward(-np.arange(5.0), critic)) == 0.3


def test_output_scales_with_last_layer_weights():
    critic = critic_init(5, SeededRng(3), hidden=(4, 4))
    y = as_tensor(SeededRng(4).normal(5))
    bias = float(critic.biases[-1])
    before = float(critic(y)) - bias
    with torch.no_grad():
        critic.weights[-1].mul_(2.5)
    assert float(critic(y)) - bias == pytest.approx(2.5 * before, rel=1e-12)


def test_forward_matches_straight_line_evaluation():
    critic = critic_init(6, SeededRng(5), hidden=(7, 3))
    y = SeededRng(6).normal(6)
    W = [w.detach().numpy() for w in critic.weights]
    b = [v.detach().numpy() for v in critic.biases]
    h1 = np.logaddexp(0.0, W[0] @ y / math.sqrt(6) + b[0])
    h2 = np.logaddexp(0.0, W[1] @ h1 / math.sqrt(7) + b[1])
    expected = W[2] @ h2 / math.sqrt(3) + b[2]
    assert float(critic(as_tensor(y))) == pytest.approx(float(expected[0]), abs=1e-12)


def test_batch_evaluation_matches_rows():
    critic = critic_init(4, SeededRng(7), hidden=(3, 3))
    Y = as_tensor(SeededRng(8).normal((5, 4)))
    batch = critic(Y)
    for i in range(5):
        assert float(batch[i]) == pytest.approx(float(critic(Y[i])), abs=1e-14)


def test_mix_pairs_examples(rng):
    Y = as_tensor(rng.normal((6, 4)))
    Y_tilde = as_tensor(rng.normal((6, 4)))
    assert torch.equal(mix_pairs(Y, Y, rng), Y)
    assert torch.equal(mix_pairs(Y, Y_tilde, rng, delta=np.ones(6)), Y)
    assert torch.equal(mix_pairs(Y, Y_tilde, rng, delta=np.zeros(6)), Y_tilde)
    mixed = mix_pairs(Y, Y_tilde, rng)
    assert torch.all(mixed >= torch.minimum(Y, Y_tilde) - 1e-15)
    assert torch.all(mixed <= torch.maximum(Y, Y_tilde) + 1e-15)


def test_mix_pairs_rejects_size_mismatch(rng):
    with pytest.raises(InvalidArgumentError):
        mix_pairs(torch.zeros(3, 4), torch.zeros(2, 4), rng)


def test_penalty_of_constant_critic_is_zeta():
    critic = CriticNetwork(4, hidden=(3, 3))
    Y_bar = as_tensor(SeededRng(9).normal((8, 4)))
    assert float(gradient_penalty(Y_bar, critic, 10.0)) == pytest.approx(10.0, abs=1e-15)


def test_penalty_of_unit_gradient_critic_is_zero():
    critic = CriticNetwork(3, hidden=(1,))
    with torch.no_grad():
        # One softplus unit deep in its linear regime along a unit direction.
        critic.weights[0].copy_(as_tensor([[0.6, 0.0, 0.8]]) * math.sqrt(3))
        critic.biases[0].fill_(50.0)
        critic.weights[1].fill_(1.0)
    Y_bar = as_tensor(SeededRng(10).normal((5, 3)))
    assert float(gradient_penalty(Y_bar, critic, 10.0)) == pytest.approx(0.0, abs=1e-20)


def test_penalty_is_nonnegative():
    critic = critic_init(4, SeededRng(11), hidden=(5, 5))
    Y_bar = as_tensor(SeededRng(12).normal((10, 4)))
    assert float(gradient_penalty(Y_bar, critic, 10.0)) >= 0.0


def test_penalty_gradient_matches_finite_differences():
    critic = critic_init(3, SeededRng(13), hidden=(4, 4))
    Y_bar = as_tensor(SeededRng(14).normal((6, 3)))
    W0 = critic.weights[0]
    (gradient,) = grad(gradient_penalty(Y_bar, critic, 10.0), [W0])
    original = W0.detach().clone()

    def objective(vector):
        with torch.no_grad():
            W0.copy_(as_tensor(vector))
        return float(gradient_penalty(Y_bar, critic, 10.0).detach())

    expected = finite_difference_gradient(objective, original.numpy())
    with torch.no_grad():
        W0.copy_(original)
    np.testing.assert_allclose(gradient.numpy(), expected, rtol=1e-4, atol=1e-8)


def test_wasserstein_estimate_properties():
    critic = critic_init(4, SeededRng(15), hidden=(5, 5))
    rng = SeededRng(16)
    Y, Y_tilde = as_tensor(rng.normal((7, 4))), as_tensor(rng.normal((7, 4)))
    assert float(wasserstein_estimate(Y, Y, critic)) == 0.0
    forward = float(wasserstein_estimate(Y, Y_tilde, critic))
    assert float(wasserstein_estimate(Y_tilde, Y, critic)) == pytest.approx(-forward, abs=1e-15)


def test_mean_critic_gives_difference_of_grand_means():
    n = 4
    critic = CriticNetwork(n, hidden=(1,))
    with torch.no_grad():
        # One hidden unit far in the linear regime of softplus.
        critic.weights[0].fill_(math.sqrt(n) / n)
        critic.biases[0].fill_(50.0)
        critic.weights[1].fill_(1.0)
        critic.biases[1].fill_(-50.0)
    rng = SeededRng(17)
    Y, Y_tilde = as_tensor(rng.normal((9, n))), as_tensor(rng.normal((9, n)))
    expected = float(Y.mean() - Y_tilde.mean())
    assert float(wasserstein_estimate(Y, Y_tilde, critic)) == pytest.approx(expected, abs=1e-10)


def test_wasserstein_estimate_rejects_size_mismatch():
    critic = CriticNetwork(4, hidden=(2,))
    with pytest.raises(InvalidArgumentError):
        wasserstein_estimate(torch.zeros(3, 4), torch.zeros(4, 4), critic)


def test_critic_rejects_wrong_field_length():
    with pytest.raises(InvalidArgumentError):
        CriticNetwork(4, hidden=(2,))(torch.zeros(5))


def test_load_flat_round_trip():
    critic = critic_init(3, SeededRng(18), hidden=(2, 2))
    other = CriticNetwork(3, hidden=(2, 2)).load_flat(critic.flatten())
    np.testing.assert_array_equal(other.flatten(), critic.flatten())
    with pytest.raises(InvalidArgumentError):
        other.load_flat(np.zeros(3))
