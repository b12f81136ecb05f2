"""Tests for sample-quality metrics, metric series and ground-truth references"""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import make_problem
from latent_imh.exceptions import DimensionMismatchError, InsufficientSamplesError
from latent_imh.metrics import (
    GroundTruth,
    MetricSeries,
    RunningMoments,
    effective_sample_size,
    error_maps,
    ground_truth,
    median_heuristic,
    metric_series,
    mmd2,
    relative_mean_error,
    solves_to_reach,
    squared_bias_second_moment,
)
from latent_imh.operators import DiagonalMap
from latent_imh.posteriors import gaussian_posterior
from latent_imh.priors import LaplacePrior
from latent_imh.problems.base import ProblemInstance
from latent_imh.samplers import SampleBatch


def mmd2_double_loop(X, Y, gamma):
    def k(a, b):
        return math.exp(-gamma * sum((ai - bi) ** 2 for ai, bi in zip(a, b)))

    X, Y = X.tolist(), Y.tolist()
    m, n = len(X), len(Y)
    xx = sum(k(X[i], X[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    yy = sum(k(Y[i], Y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    xy = sum(k(a, b) for a in X for b in Y) / (m * n)
    return xx + yy - 2.0 * xy


def fitted_slope(ns, values):
    return np.polyfit(np.log(ns), np.log(values), 1)[0]


class TestMmd:
    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((500, 2))
        Y = rng.standard_normal((500, 2)) + 0.3
        assert mmd2(X, Y, 0.7) == pytest.approx(mmd2_double_loop(X, Y, 0.7), abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        X, Y = rng.standard_normal((40, 3)), rng.standard_normal((60, 3))
        assert mmd2(X, Y, 0.5) == pytest.approx(mmd2(Y, X, 0.5), abs=1e-14)

    def test_biased_estimator_vanishes_on_identical_sets(self):
        X = np.random.default_rng(2).standard_normal((30, 2))
        assert mmd2(X, X, 1.0, unbiased=False) == pytest.approx(0.0, abs=1e-14)

    def test_unbiased_estimator_centred_under_the_null(self):
        rng = np.random.default_rng(3)
        values = np.array([mmd2(rng.standard_normal((50, 2)), rng.standard_normal((50, 2)), 0.5) for _ in range(200)])
        se = values.std(ddof=1) / np.sqrt(values.size)
        assert abs(values.mean()) <= 3 * se

    def test_detects_shift(self):
        rng = np.random.default_rng(4)
        assert mmd2(rng.standard_normal((200, 2)), rng.standard_normal((200, 2)) + 2.0, 0.5) > 0.1

    def test_unbiased_needs_two_rows(self):
        with pytest.raises(InsufficientSamplesError):
            mmd2(np.zeros((1, 2)), np.ones((5, 2)), 1.0)

    def test_dimension_checked(self):
        with pytest.raises(DimensionMismatchError):
            mmd2(np.zeros((3, 2)), np.zeros((3, 3)), 1.0)


class TestMedianHeuristic:
    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        Y = rng.standard_normal((300, 3))
        assert median_heuristic(Y) == pytest.approx(median_heuristic(Y[rng.permutation(300)]), rel=1e-12)

    def test_scales_inverse_quadratically(self):
        Y = np.random.default_rng(6).standard_normal((200, 2))
        assert median_heuristic(3.0 * Y) == pytest.approx(median_heuristic(Y) / 9.0, rel=1e-12)

    def test_subsample_is_seeded(self):
        Y = np.random.default_rng(7).standard_normal((500, 2))
        assert median_heuristic(Y, max_points=100, seed=1) == median_heuristic(Y, max_points=100, seed=1)

    def test_degenerate_reference(self):
        with pytest.raises(InsufficientSamplesError):
            median_heuristic(np.ones((10, 2)))


class TestMomentErrors:
    def test_relative_mean_error(self):
        samples = np.array([[1.0, 2.0], [3.0, 2.0]])
        assert relative_mean_error(samples, [2.0, 1.0]) == pytest.approx(1.0 / np.sqrt(5.0))

    def test_zero_mean_reports_absolute_error(self):
        value, flagged = relative_mean_error(np.array([[3.0, 4.0]]), np.zeros(2), return_flag=True)
        assert flagged
        assert value == pytest.approx(5.0)

    def test_squared_bias_skips_zero_coordinates(self):
        samples = np.array([[1.0, 0.0, 2.0], [1.0, 0.0, 2.0]])
        value, flagged = squared_bias_second_moment(samples, [2.0, 0.0, 4.0], return_flag=True)
        assert flagged
        assert value == pytest.approx(0.125)

    def test_iid_mean_error_decays_at_root_n(self):
        rng = np.random.default_rng(8)
        mu = np.array([1.0, -2.0, 0.5])
        ns = np.geomspace(100, 10_000, 6).astype(int)
        errors = [np.mean([relative_mean_error(mu + rng.standard_normal((n, 3)), mu) for _ in range(50)]) for n in ns]
        assert fitted_slope(ns, errors) == pytest.approx(-0.5, abs=0.1)

    def test_iid_squared_bias_decays_at_n(self):
        rng = np.random.default_rng(9)
        mu = np.array([1.0, -2.0, 0.5])
        second = mu**2 + 1.0
        ns = np.geomspace(100, 10_000, 6).astype(int)
        biases = [
            np.mean([squared_bias_second_moment(mu + rng.standard_normal((n, 3)), second) for _ in range(50)])
            for n in ns
        ]
        assert fitted_slope(ns, biases) == pytest.approx(-1.0, abs=0.2)


class TestErrorMaps:
    def test_maps_match_two_pass_statistics(self):
        rng = np.random.default_rng(10)
        samples = rng.standard_normal((100, 6))
        mean_map, var_map = error_maps(samples, np.zeros(6), np.ones(6), (2, 3))
        assert mean_map.shape == (2, 3)
        assert_allclose(mean_map.ravel(), np.abs(samples.mean(axis=0)))
        assert_allclose(var_map.ravel(), np.abs(samples.var(axis=0, ddof=1) - 1.0))

    def test_two_samples_suffice(self):
        _, var_map = error_maps(np.array([[0.0, 2.0], [2.0, 2.0]]), np.zeros(2), np.zeros(2), (1, 2))
        assert_allclose(var_map, [[2.0, 0.0]])

    def test_single_sample_rejected(self):
        with pytest.raises(InsufficientSamplesError):
            error_maps(np.zeros((1, 4)), np.zeros(4), np.ones(4), (2, 2))


class TestRunningMoments:
    def test_welford_matches_two_pass(self):
        rng = np.random.default_rng(11)
        samples = 5.0 + rng.standard_normal((1000, 3))
        moments = RunningMoments(3)
        for x in samples:
            moments.update(x)
        assert_allclose(moments.mean, samples.mean(axis=0), rtol=1e-12)
        assert_allclose(moments.variance(), samples.var(axis=0, ddof=1), rtol=1e-10)
        assert_allclose(moments.second_moment, np.mean(samples**2, axis=0), rtol=1e-10)

    def test_batch_merge_matches_single_updates(self):
        rng = np.random.default_rng(12)
        samples = rng.standard_normal((97, 2))
        single, batched = RunningMoments(2), RunningMoments(2)
        for x in samples:
            single.update(x)
        for start, stop in ((0, 1), (1, 40), (40, 97)):
            batched.update_batch(samples[start:stop])
        assert batched.count == 97
        assert_allclose(batched.mean, single.mean, rtol=1e-12)
        assert_allclose(batched.variance(), single.variance(), rtol=1e-10)

    def test_variance_needs_enough_samples(self):
        moments = RunningMoments(1)
        moments.update(np.ones(1))
        with pytest.raises(InsufficientSamplesError):
            moments.variance()


class TestEffectiveSampleSize:
    def test_iid_chain(self):
        chain = np.random.default_rng(13).standard_normal((5000, 2))
        ess = effective_sample_size(chain)
        assert np.all((ess > 3000) & (ess < 8000))

    def test_autocorrelated_chain(self):
        rng = np.random.default_rng(14)
        phi, n = 0.9, 20_000
        chain = np.empty(n)
        chain[0] = rng.standard_normal()
        for t in range(1, n):
            chain[t] = phi * chain[t - 1] + np.sqrt(1 - phi**2) * rng.standard_normal()
        expected = n * (1 - phi) / (1 + phi)
        assert 0.6 * expected < effective_sample_size(chain)[0] < 1.5 * expected

    def test_constant_chain(self):
        assert_allclose(effective_sample_size(np.full((50, 2), 3.0)), 1.0)


def make_batch(samples, accepted):
    n = samples.shape[0]
    return SampleBatch(
        samples=samples,
        accepted=np.asarray(accepted, dtype=bool),
        forward_solves=np.arange(1, n + 1),
        inverse_solves=np.zeros(n, dtype=int),
    )


class TestMetricSeries:
    @pytest.fixture
    def setup(self):
        rng = np.random.default_rng(15)
        samples = 1.0 + rng.standard_normal((20, 2))
        accepted = rng.random(20) < 0.6
        accepted[0] = True
        truth = GroundTruth(mean=np.ones(2), second_moment=np.full(2, 2.0), samples=1.0 + rng.standard_normal((30, 2)))
        return make_batch(samples, accepted), truth

    def test_checkpoints_beyond_the_chain_are_dropped(self, setup):
        batch, truth = setup
        series = metric_series(batch, [1, 5, 10, 20, 50], truth, gamma=0.5)
        assert list(series.checkpoints) == [1, 5, 10, 20]
        assert len(series) == 4
        assert len(series.rows()) == 4

    def test_values_match_direct_computation(self, setup):
        batch, truth = setup
        series = metric_series(batch, [1, 5, 10, 20], truth, gamma=0.5)
        for i, t in enumerate([1, 5, 10, 20]):
            prefix = batch.samples[:t]
            assert series.cost_forward[i] == t
            assert series.cost_inverse[i] == 0
            assert series.acceptance_rate[i] == pytest.approx(batch.accepted[:t].mean())
            assert series.rel_mean_err[i] == pytest.approx(relative_mean_error(prefix, truth.mean), rel=1e-10)
            assert series.sq_bias_2nd[i] == pytest.approx(squared_bias_second_moment(prefix, truth.second_moment), rel=1e-8)
            assert series.mmd[i] == pytest.approx(mmd2(prefix, truth.samples, 0.5, unbiased=t >= 2), rel=1e-10)

    def test_solves_to_reach(self):
        series = MetricSeries(
            checkpoints=np.array([1, 2, 3]),
            cost_forward=np.array([4, 8, 12]),
            cost_inverse=np.array([1, 1, 2]),
            acceptance_rate=np.ones(3),
            rel_mean_err=np.array([0.5, 0.09, 0.2]),
            sq_bias_2nd=np.zeros(3),
            mmd=np.zeros(3),
        )
        assert solves_to_reach(series, 0.1) == 9
        assert solves_to_reach(series, 0.01) is None

    def test_ragged_columns_rejected(self):
        series = MetricSeries(
            checkpoints=np.array([1, 2, 3]),
            cost_forward=np.array([1, 2, 3]),
            cost_inverse=np.zeros(3),
            acceptance_rate=np.ones(3),
            rel_mean_err=np.ones(2),
            sq_bias_2nd=np.zeros(3),
            mmd=np.zeros(3),
        )
        with pytest.raises(DimensionMismatchError, match="rel_mean_err"):
            series.rows()


class TestGroundTruth:
    def test_gaussian_prior_uses_closed_form(self, two_dim_problem, two_dim_y):
        instance = ProblemInstance(problem=two_dim_problem, y=two_dim_y, x_true=np.ones(2))
        truth = ground_truth(instance, 500, seed=0)
        post = gaussian_posterior(two_dim_problem, two_dim_y, "exact")
        assert_allclose(truth.mean, post.mean)
        assert_allclose(truth.variance, np.diag(post.covariance), atol=1e-12)
        assert truth.samples.shape == (500, 2)
        assert two_dim_problem.counter.total == 0

    def test_nuts_reference_is_cached(self, tmp_path):
        problem = make_problem(DiagonalMap([2.0, 1.0]), DiagonalMap([2.1, 0.95]), sigma=0.5, prior=LaplacePrior(2))
        instance = ProblemInstance(problem=problem, y=np.array([1.0, 0.5]), x_true=np.zeros(2))
        cache = tmp_path / "reference.npz"
        first = ground_truth(instance, 100, seed=0, cache_path=cache, n_runs=2, n_warmup=50)
        assert cache.exists()
        assert first.samples.shape == (100, 2)
        assert problem.counter.total == 0
        second = ground_truth(instance, 100, seed=99, cache_path=cache, n_runs=2, n_warmup=50)
        assert np.array_equal(first.samples, second.samples)
