import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sggn import graphgen as gg
from sggn.errors import ContractError
from sggn.numerics import T, Tensor, grad, make_rng


def test_gumbel_known_values():
    np.testing.assert_allclose(gg.gumbel_from_uniform(math.exp(-1)), 0.0, atol=1e-15)
    np.testing.assert_allclose(gg.gumbel_from_uniform(math.exp(-math.e)), -1.0, atol=1e-15)


def test_gumbel_clamps_endpoints():
    g = gg.gumbel_from_uniform(np.array([0.0, 1.0]))
    assert np.all(np.isfinite(g))


def test_gumbel_mean_is_euler_mascheroni():
    g = gg.sample_standard_gumbel(10 ** 6, make_rng(0, "gumbel"))
    assert abs(g.mean() - 0.5772156649) < 0.005


def test_gumbel_count_contract():
    assert gg.sample_standard_gumbel(0, make_rng(0)).shape == (0,)
    with pytest.raises(ContractError):
        gg.sample_standard_gumbel(-1, make_rng(0))


def test_gumbel_softmax_normalized_and_temperature_guard():
    rng = make_rng(1)
    for _ in range(20):
        out = gg.gumbel_softmax(rng.standard_normal(2) * 5, 0.7, rng).data
        assert np.all(out > 0)
        assert abs(out.sum() - 1.0) < 1e-12
    for tau in (0.0, -1.0):
        with pytest.raises(ContractError):
            gg.gumbel_softmax(np.zeros(2), tau, rng)


def test_gumbel_softmax_zero_temperature_is_one_hot():
    logits = np.array([0.3, -0.2])
    g = np.array([-0.4, 0.6])
    out = gg.gumbel_softmax_with_noise(logits, g, 1e-6).data
    np.testing.assert_array_equal(out, np.eye(2)[np.argmax(logits + g)])


def test_equal_logits_selection_frequency():
    rng = make_rng(2, "freq")
    probs = gg.gumbel_softmax(np.zeros((10 ** 5, 2)), 1.0, rng).data
    freq = np.mean(np.argmax(probs, axis=1) == 1)
    assert abs(freq - 0.5) < 0.01


def test_saturated_logit_gives_unit_weight():
    dist = gg.AdjacencyDistribution(3, np.tile([0.0, 20.0], (3, 1)), tau=1.0)
    a = gg.relaxed_adjacency(dist.logits, 3, 1.0, np.zeros((3, 2))).data
    np.testing.assert_allclose(a, np.ones((3, 3)) - np.eye(3), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10 ** 6), st.floats(0.05, 3.0), st.booleans())
def test_samples_symmetric_zero_diagonal_bounded(n, seed, tau, hard):
    rng = make_rng(seed)
    dist = gg.AdjacencyDistribution.init(n, rng, scale=2.0, tau=tau)
    a = gg.sample_adjacency(dist, rng, hard=hard).matrix
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert np.all((a >= 0) & (a <= 1))
    if hard:
        assert set(np.unique(a)) <= {0.0, 1.0}


def test_symmetric_logit_edge_frequency():
    rng = make_rng(3, "edges")
    dist = gg.AdjacencyDistribution.init(4)
    iu = gg.pair_indices(4)
    w = [gg.sample_adjacency(dist, rng).matrix[iu].mean() for _ in range(10 ** 4)]
    assert abs(np.mean(w) - 0.5) < 0.02


def test_gradient_with_frozen_noise_matches_fd():
    rng = make_rng(4)
    n = 4
    logits = rng.standard_normal((6, 2))
    g = gg.sample_standard_gumbel((6, 2), rng)
    W = rng.standard_normal((n, n))

    def f(lg):
        a = gg.relaxed_adjacency(T.reshape(lg, (6, 2)), n, 0.8, g)
        return T.sum_(a * Tensor(W))

    def f_np(lg):
        z = (lg.reshape(6, 2) + g) / 0.8
        p = np.exp(z[:, 1]) / np.exp(z).sum(1)
        a = np.zeros((n, n))
        a[gg.pair_indices(n)] = p
        return float(np.sum((a + a.T) * W))

    x = logits.reshape(-1)
    fd = np.array([(f_np(x + e) - f_np(x - e)) / 2e-6 for e in np.eye(x.size) * 1e-6])
    an = grad(f, x)
    assert np.linalg.norm(an - fd) / np.linalg.norm(fd) < 1e-5


def test_hard_sample_gradient_is_soft_gradient():
    rng = make_rng(5)
    logits = rng.standard_normal((3, 2))
    g = gg.sample_standard_gumbel((3, 2), rng)
    W = rng.standard_normal((3, 3))
    soft = grad(lambda lg: T.sum_(gg.relaxed_adjacency(T.reshape(lg, (3, 2)), 3, 1.0, g) * Tensor(W)),
                logits.reshape(-1))
    hard = grad(lambda lg: T.sum_(gg.relaxed_adjacency(T.reshape(lg, (3, 2)), 3, 1.0, g, hard=True)
                                  * Tensor(W)), logits.reshape(-1))
    np.testing.assert_array_equal(soft, hard)


def test_annealing_monotone_at_fixed_draw():
    rng = make_rng(6)
    logits = rng.standard_normal((50, 2))
    g = gg.sample_standard_gumbel((50, 2), rng)
    prev = None
    for tau in np.geomspace(1.0, 0.01, 30):
        mx = gg.gumbel_softmax_with_noise(logits, g, tau).data.max(axis=1)
        if prev is not None:
            assert np.all(mx >= prev - 1e-15)
        prev = mx


def test_annealed_tau_schedule():
    assert gg.annealed_tau(0) == 1.0
    assert gg.annealed_tau(1) == pytest.approx(0.98)
    assert gg.annealed_tau(10 ** 4) == 0.1


def test_distribution_shape_checks_and_probabilities():
    with pytest.raises(ContractError):
        gg.AdjacencyDistribution(3, np.zeros((2, 2)))
    with pytest.raises(ContractError):
        gg.AdjacencyDistribution(3, np.zeros((3, 2)), tau=0.0)
    p = gg.AdjacencyDistribution.init(3).edge_probabilities()
    np.testing.assert_allclose(p, 0.5 * (np.ones((3, 3)) - np.eye(3)))
    full = gg.AdjacencyDistribution.init(3).full_logits()
    assert np.all(full[np.arange(3), np.arange(3), gg.PRESENT] == -np.inf)


def test_mode_adjacency_hard_and_soft():
    dist = gg.AdjacencyDistribution(3, np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 3.0]]))
    hard = gg.mode_adjacency(dist).matrix
    np.testing.assert_array_equal(hard[gg.pair_indices(3)], [1.0, 0.0, 1.0])
    soft = gg.mode_adjacency(dist, hard=False).matrix
    np.testing.assert_allclose(soft, dist.edge_probabilities(), rtol=1e-14)


def test_adjacency_csv_round_trip(tmp_path):
    a = gg.sample_adjacency(gg.AdjacencyDistribution.init(5, make_rng(7), 1.0), make_rng(8)).matrix
    path = tmp_path / "adj.csv"
    gg.adjacency_to_csv(a, path)
    np.testing.assert_array_equal(gg.adjacency_from_csv(path), a)
    assert len(path.read_text().splitlines()) == 5
