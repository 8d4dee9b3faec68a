import json
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from revdiff.targets import (
    GaussianMixture,
    Potential,
    QueryBudgetExceeded,
    gm_constants,
    gm_log_density,
    gm_noised,
    gm_score,
    load_mixture,
    make_target,
    random_mixture,
    sample_gm,
    sixteen_gaussians,
    standard_gaussian,
    three_mode_ring,
)


def scipy_log_density(gm, x):
    # independent oracle: scipy per-component pdfs summed in log space
    terms = [math.log(w) + multivariate_normal(m, c).logpdf(x)
             for w, m, c in zip(gm.weights, gm.means, gm.covariances)]
    return np.logaddexp.reduce(np.array(terms), axis=0)


def fd_score(gm, x, step=1e-5):
    h = step * max(1.0, np.linalg.norm(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (gm_log_density(gm, x + e) - gm_log_density(gm, x - e)) / (2 * h)
    return g


class TestValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum"):
            GaussianMixture([0.5, 0.4], [[0.0], [1.0]], [1.0, 1.0])

    def test_weights_positive(self):
        with pytest.raises(ValueError):
            GaussianMixture([1.5, -0.5], [[0.0], [1.0]], [1.0, 1.0])

    def test_asymmetric_covariance(self):
        with pytest.raises(ValueError, match="symmetric"):
            GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 0.1], [0.0, 1.0]]])

    def test_not_positive_definite(self):
        with pytest.raises(ValueError):
            GaussianMixture([1.0], [[0.0, 0.0]], [[[1.0, 2.0], [2.0, 1.0]]])

    def test_covariance_forms_normalized(self):
        gm = GaussianMixture([0.5, 0.25, 0.25], np.zeros((3, 2)), [2.0, [1.0, 3.0], [[1.0, 0.2], [0.2, 1.0]]])
        assert gm.covariances.shape == (3, 2, 2)
        np.testing.assert_array_equal(gm.covariances[0], 2.0 * np.eye(2))
        np.testing.assert_array_equal(gm.covariances[1], np.diag([1.0, 3.0]))

    def test_dimension_mismatch(self):
        gm = standard_gaussian(2)
        with pytest.raises(ValueError):
            gm.log_density(np.zeros(3))
        with pytest.raises(ValueError):
            gm.score(np.zeros((4, 3)))


class TestLogDensity:
    def test_standard_normalizer(self):
        assert gm_log_density(standard_gaussian(2), np.zeros(2)) == pytest.approx(-1.8378770664093453, abs=1e-12)

    def test_symmetric_pair_at_origin(self):
        gm = GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [1.0, 1.0])
        # log phi(1), frozen from -1/2 - log(2 pi)/2
        assert gm_log_density(gm, [0.0]) == pytest.approx(-1.4189385332046727, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scipy(self, seed):
        gm = random_mixture(seed)
        x = np.random.default_rng(seed).normal(scale=3.0, size=(50, gm.dim))
        np.testing.assert_allclose(gm.log_density(x), scipy_log_density(gm, x), rtol=1e-10, atol=1e-10)

    def test_far_tail_finite(self):
        gm = sixteen_gaussians(0)
        r = 1e4 * gm.constants().r_max
        x = np.array([[r, 0.0], [0.0, -r], [1e6, 1e6]])
        assert np.all(np.isfinite(gm.log_density(x)))
        assert np.all(np.isfinite(gm.score(x)))

    def test_integrates_to_one(self):
        gm = three_mode_ring(2.0)
        g = np.linspace(-9, 9, 721)
        X, Y = np.meshgrid(g, g)
        dens = np.exp(gm.log_density(np.stack([X.ravel(), Y.ravel()], axis=1)))
        assert dens.sum() * (g[1] - g[0]) ** 2 == pytest.approx(1.0, abs=1e-6)

    def test_batch_independent(self):
        gm = random_mixture(3)
        x = np.random.default_rng(0).normal(size=(64, gm.dim))
        whole = gm.log_density(x)
        parts = np.concatenate([gm.log_density(x[:7]), gm.log_density(x[7:])])
        np.testing.assert_array_equal(whole, parts)


class TestScore:
    def test_single_gaussian(self):
        cov = np.array([[2.0, 0.3], [0.3, 0.5]])
        m = np.array([1.0, -2.0])
        gm = GaussianMixture([1.0], [m], [cov])
        x = np.random.default_rng(1).normal(size=(10, 2))
        np.testing.assert_allclose(gm_score(gm, x), -np.linalg.solve(cov, (x - m).T).T, rtol=1e-12, atol=1e-12)

    def test_non_holder_diagonal(self):
        gm = GaussianMixture([0.5, 0.5], np.zeros((2, 2)), [[1.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(gm_score(gm, [1.0, 1.0]), [-1.5, -1.5], rtol=0, atol=1e-14)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        gm = random_mixture(100 + seed)
        pts = np.random.default_rng(seed).normal(scale=2.0, size=(20, gm.dim))
        for x in pts:
            np.testing.assert_allclose(gm_score(gm, x), fd_score(gm, x), rtol=1e-5, atol=1e-7)

    def test_responsibilities_sum_to_one(self):
        gm = sixteen_gaussians(3)
        x = np.random.default_rng(0).uniform(-60, 60, size=(200, 2))
        np.testing.assert_allclose(gm.responsibilities(x).sum(axis=1), 1.0, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 50.0))
def test_score_fd_property(seed, scale):
    gm = random_mixture(seed)
    x = np.random.default_rng(seed).normal(scale=scale, size=gm.dim)
    np.testing.assert_allclose(gm_score(gm, x), fd_score(gm, x), rtol=1e-4, atol=1e-6 * max(1.0, scale))


class TestNoised:
    def test_time_zero_identity(self):
        gm = random_mixture(0)
        assert gm_noised(gm, 0.0) is gm

    def test_standard_fixed_point(self):
        gm = standard_gaussian(3)
        out = gm_noised(gm, 0.7)
        np.testing.assert_allclose(out.covariances[0], np.eye(3), atol=1e-15)
        np.testing.assert_allclose(out.means, 0.0)

    def test_shift_halves(self):
        gm = GaussianMixture([1.0], [[4.0, 0.0]], [1.0])
        out = gm_noised(gm, math.log(2.0))
        np.testing.assert_allclose(out.means[0], [2.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(out.covariances[0], np.eye(2), atol=1e-15)

    @pytest.mark.parametrize("s,t", [(0.1, 0.3), (0.5, 1.0), (2.0, 0.25)])
    def test_component_map(self, s, t):
        gm = random_mixture(7)
        out = gm_noised(gm, s + t)
        u = s + t
        np.testing.assert_allclose(out.means, math.exp(-u) * gm.means, atol=1e-12)
        expect = math.exp(-2 * u) * gm.covariances + (1 - math.exp(-2 * u)) * np.eye(gm.dim)
        np.testing.assert_allclose(out.covariances, expect, atol=1e-12)
        np.testing.assert_array_equal(out.weights, gm.weights)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            gm_noised(standard_gaussian(), -0.1)


class TestConstants:
    def test_standard(self):
        c = gm_constants(standard_gaussian(4))
        assert (c.beta, c.a, c.b) == (1.0, 0.5, 0.0)

    def test_two_component(self):
        gm = GaussianMixture([0.5, 0.5], [[2.0, 0.0], [-2.0, 0.0]], [0.5, 1.0])
        c = gm_constants(gm)
        assert c.lambda_min == pytest.approx(0.5)
        assert c.lambda_max == pytest.approx(1.0)
        assert c.beta == pytest.approx(2.0)
        assert c.a == pytest.approx(0.5)
        assert c.b == pytest.approx(16.0)

    def test_rescaling_consistent(self):
        gm = random_mixture(4)
        k = 3.0
        scaled = GaussianMixture(gm.weights, math.sqrt(k) * gm.means, k * gm.covariances)
        c0, c1 = gm.constants(), scaled.constants()
        fresh = GaussianMixture(scaled.weights, scaled.means, scaled.covariances).constants()
        assert c1 == fresh
        assert c1.beta == pytest.approx(c0.beta / k)
        assert c1.a == pytest.approx(c0.a / k)


class TestSampling:
    def test_moments(self):
        x = sample_gm(standard_gaussian(2), 100_000, seed=0)
        assert np.all(np.abs(x.mean(axis=0)) < 0.02)
        assert np.all(np.abs(np.cov(x.T) - np.eye(2)) < 0.03)

    def test_deterministic(self):
        gm = random_mixture(2)
        np.testing.assert_array_equal(sample_gm(gm, 1, seed=5), sample_gm(gm, 1, seed=5))

    def test_component_counts(self):
        gm = GaussianMixture([0.5, 0.5], [[-5.0], [5.0]], [1.0, 1.0])
        n = 40_000
        _, labels = gm.sample_with_labels(n, seed=1)
        assert abs(np.sum(labels == 0) - n / 2) <= 3 * math.sqrt(n / 4)

    def test_second_moment(self):
        gm = random_mixture(9)
        x = gm.sample(200_000, seed=0)
        sq = (x**2).sum(axis=1)
        assert abs(sq.mean() - gm.second_moment()) < 4 * sq.std() / math.sqrt(len(sq))


class TestPotential:
    def test_counts_points(self):
        pot = standard_gaussian(2).as_potential()
        pot.evaluate(np.zeros((3, 5, 2)))
        pot.gradient(np.zeros(2))
        assert pot.snapshot() == (15, 1)
        pot.reset()
        assert pot.snapshot() == (0, 0)

    def test_budget(self):
        pot = standard_gaussian(1).as_potential(budget=10)
        pot.evaluate(np.zeros((6, 1)))
        with pytest.raises(QueryBudgetExceeded):
            pot.gradient(np.zeros((5, 1)))
        assert pot.snapshot() == (6, 0)

    def test_pointwise(self):
        pot = Potential.from_pointwise(2, lambda x: 0.5 * x @ x, lambda x: x)
        np.testing.assert_allclose(pot.evaluate(np.ones((4, 2))), 1.0)
        assert pot.queries == 4

    def test_no_gradient(self):
        pot = Potential(1, lambda x: x[..., 0] ** 2)
        assert not pot.has_gradient
        with pytest.raises(ValueError):
            pot.gradient(np.zeros(1))

    def test_threaded_counter(self):
        pot = standard_gaussian(1).as_potential()
        x = np.zeros((10, 1))

        def work():
            for _ in range(200):
                pot.evaluate(x)

        threads = [threading.Thread(target=work) for _ in range(4)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert pot.queries == 4 * 200 * 10

    def test_potential_matches_log_density(self):
        gm = random_mixture(1)
        x = np.random.default_rng(0).normal(size=(5, gm.dim))
        np.testing.assert_allclose(gm.as_potential().evaluate(x), -gm.log_density(x))


class TestIO:
    def test_round_trip(self, tmp_path):
        gm = random_mixture(11)
        path = tmp_path / "mix.json"
        path.write_text(json.dumps(gm.to_dict()))
        back = load_mixture(path)
        np.testing.assert_array_equal(back.covariances, gm.covariances)
        np.testing.assert_array_equal(back.means, gm.means)

    def test_scalar_covariances_on_load(self, tmp_path):
        path = tmp_path / "mix.json"
        path.write_text(json.dumps({"weights": [1.0], "means": [[0.0, 1.0]], "covariances": [0.5]}))
        np.testing.assert_array_equal(load_mixture(path).covariances[0], 0.5 * np.eye(2))

    def test_make_target_presets(self):
        assert make_target({"preset": "three-mode-ring", "R": 3}).n_components == 3
        assert make_target({"preset": "sixteen-gaussians"}, seed=4).n_components == 16
        np.testing.assert_array_equal(
            make_target({"preset": "sixteen-gaussians"}, seed=4).means, sixteen_gaussians(4).means
        )

    def test_ring_geometry(self):
        gm = three_mode_ring(10.0)
        np.testing.assert_allclose(np.linalg.norm(gm.means, axis=1), 10.0)
        np.testing.assert_allclose(gm.means[0], [0.0, 10.0], atol=1e-12)
        np.testing.assert_allclose([np.trace(c) / 2 for c in gm.covariances], [1.0, 0.5, 0.25])
