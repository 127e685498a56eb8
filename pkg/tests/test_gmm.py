"""
Unit tests for the two-component GMM
"""
import unittest

import numpy as np
from scipy.stats import norm

from idn_sample_selector.analysis.gmm import (
    LARGER_MEAN,
    SMALLER_MEAN,
    Gmm1DFit,
    clean_posterior,
    fit_gmm1d,
    partition_by_posterior,
    posterior,
    posteriors,
)
from idn_sample_selector.utils.errors import ConfigError, DegenerateDataError, InsufficientDataError


def bimodal(rng, n=400, low=0.0, high=1.0, spread=0.1, share=0.5):
    n_low = int(n * share)
    return np.concatenate([rng.normal(low, spread, n_low), rng.normal(high, spread, n - n_low)])


class TestGmm(unittest.TestCase):
    """Test class for fit_gmm1d and posteriors"""

    def test_recovers_separated_means(self):
        """Test mean recovery on well-separated clusters"""
        fit = fit_gmm1d(bimodal(np.random.default_rng(0), n=1000))
        self.assertLess(abs(fit.mean_a - 0.0), 0.05)
        self.assertLess(abs(fit.mean_b - 1.0), 0.05)
        self.assertAlmostEqual(fit.weight_a + fit.weight_b, 1.0)
        self.assertAlmostEqual(fit.weight_a, 0.5, delta=0.05)

    def test_log_likelihood_never_decreases(self):
        """Test EM monotonicity over many random bimodal fits"""
        rng = np.random.default_rng(1)
        for _ in range(200):
            values = bimodal(rng, n=int(rng.integers(20, 200)), low=rng.normal(), high=rng.normal(2.0),
                             spread=rng.uniform(0.05, 1.0), share=rng.uniform(0.1, 0.9))
            history = np.array(fit_gmm1d(values, tol=0.0, max_iter=50).history)
            steps = np.diff(history)
            self.assertTrue(np.all(steps >= -1e-9 * np.maximum(1.0, np.abs(history[1:]))), steps.min())

    def test_components_sorted_by_mean(self):
        """Test that component a has the smaller mean"""
        fit = fit_gmm1d(bimodal(np.random.default_rng(2), low=5.0, high=-5.0))
        self.assertLessEqual(fit.mean_a, fit.mean_b)

    def test_deterministic(self):
        """Test that identical inputs give identical fits"""
        values = bimodal(np.random.default_rng(3))
        self.assertEqual(fit_gmm1d(values), fit_gmm1d(values))

    def test_degenerate_inputs(self):
        """Test the error contract"""
        with self.assertRaises(InsufficientDataError):
            fit_gmm1d([0.1, 0.2, 0.3])
        with self.assertRaises(DegenerateDataError):
            fit_gmm1d([0.5] * 10)
        with self.assertRaises(DegenerateDataError):
            fit_gmm1d([0.1, 0.2, np.nan, 0.4])

    def test_posteriors_sum_to_one(self):
        """Test that each posterior row sums to one"""
        values = bimodal(np.random.default_rng(4))
        fit = fit_gmm1d(values)
        resp = posteriors(fit, values)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)
        row = posterior(fit, 1.0)
        self.assertAlmostEqual(row.p_component_a + row.p_component_b, 1.0)
        self.assertGreater(row.p_component_b, 0.99)

    def test_clean_component_choice(self):
        """Test that the designated clean component selects the right cluster"""
        values = bimodal(np.random.default_rng(5))
        fit = fit_gmm1d(values)
        self.assertGreater(clean_posterior(fit, [1.0], LARGER_MEAN)[0], 0.99)
        self.assertGreater(clean_posterior(fit, [0.0], SMALLER_MEAN)[0], 0.99)
        with self.assertRaises(ConfigError):
            clean_posterior(fit, [0.0], "middle")

    def test_partition_by_posterior(self):
        """Test thresholding with and without a precomputed fit"""
        values = bimodal(np.random.default_rng(6), n=200)
        clean = partition_by_posterior(values, None, 0.5, LARGER_MEAN)
        self.assertTrue(np.all(clean[100:]))
        self.assertFalse(np.any(clean[:100]))
        with self.assertRaises(ConfigError):
            partition_by_posterior(values, None, 1.0)
        with self.assertRaises(ConfigError):
            partition_by_posterior(values, None, 0.0)

    def test_to_dict(self):
        """Test the serializable form of a fit"""
        fit = fit_gmm1d(bimodal(np.random.default_rng(7)))
        data = fit.to_dict()
        self.assertNotIn("history", data)
        self.assertEqual(data["iterations"], fit.iterations)
        self.assertEqual(len(fit.to_dict(with_history=True)["history"]), fit.iterations + 1)

    def test_affine_equivariance(self):
        """Test that fitting a*values+b moves the fit and keeps the partition"""
        values = bimodal(np.random.default_rng(8), n=300, spread=0.15, share=0.3)
        base = fit_gmm1d(values)
        base_clean = partition_by_posterior(values, None, 0.5)
        for a, b in [(1e-3, 5.0), (250.0, -3.0), (1.0, 1e4)]:
            fit = fit_gmm1d(a * values + b)
            for got, expected in [(fit.mean_a, a * base.mean_a + b), (fit.mean_b, a * base.mean_b + b),
                                  (fit.var_a, a * a * base.var_a), (fit.var_b, a * a * base.var_b)]:
                self.assertAlmostEqual(got, expected, delta=1e-6 * max(1.0, abs(expected)))
            self.assertAlmostEqual(fit.weight_a, base.weight_a, delta=1e-9)
            np.testing.assert_array_equal(partition_by_posterior(a * values + b, None, 0.5), base_clean)

    def test_one_em_step_by_hand(self):
        """Test a single EM iteration on 8 points against a direct evaluation"""
        values = np.array([-3.0, -2.0, -0.02, -0.01, 0.01, 0.02, 2.0, 3.0])
        means = np.percentile(values, [10.0, 90.0])
        variances = np.full(2, np.var(values))
        joint = 0.5 * norm.pdf(values[:, None], loc=means[None, :], scale=np.sqrt(variances)[None, :])
        resp = joint / joint.sum(axis=1, keepdims=True)
        counts = resp.sum(axis=0)
        expected_means = resp.T @ values / counts
        expected_vars = (resp * (values[:, None] - expected_means[None, :]) ** 2).sum(axis=0) / counts

        fit = fit_gmm1d(values, max_iter=1)
        np.testing.assert_allclose(fit.means, np.sort(expected_means), atol=1e-9)
        np.testing.assert_allclose(fit.variances, expected_vars[np.argsort(expected_means)], atol=1e-9)
        np.testing.assert_allclose(fit.weights, (counts / values.size)[np.argsort(expected_means)], atol=1e-9)

        converged = fit_gmm1d(values)
        self.assertGreaterEqual(converged.mean_a, values.min())
        self.assertLessEqual(converged.mean_b, values.max())

    def test_far_tail_keeps_its_component(self):
        """Test that values far outside the means stay with the nearer component"""
        wide_b = Gmm1DFit(0.5, 0.5, 0.0, 1.0, 0.01, 0.04, 0.0, 1)
        for value in (-0.5, -5.0, -1e6):
            self.assertGreater(posterior(wide_b, value).p_component_a, 0.999)
        wide_a = Gmm1DFit(0.5, 0.5, 0.0, 1.0, 0.04, 0.01, 0.0, 1)
        for value in (1.5, 6.0, 1e6):
            self.assertGreater(posterior(wide_a, value).p_component_b, 0.999)

    def test_posterior_monotone_in_value(self):
        """Test that p_b never decreases along the value axis for unequal variances"""
        rng = np.random.default_rng(9)
        grid = np.linspace(-20.0, 20.0, 4001)
        for _ in range(50):
            mean_a, mean_b = np.sort(rng.normal(0.0, 2.0, 2))
            var_a, var_b = rng.uniform(0.01, 4.0, 2)
            weight_a = rng.uniform(0.05, 0.95)
            fit = Gmm1DFit(weight_a, 1.0 - weight_a, mean_a, mean_b, var_a, var_b, 0.0, 1)
            p_b = posteriors(fit, grid)[:, 1]
            self.assertTrue(np.all(np.diff(p_b) >= -1e-12))

    def test_midpoint_of_symmetric_mixture(self):
        """Test (0.5, 0.5) halfway between equal components"""
        fit = Gmm1DFit(0.5, 0.5, -1.0, 3.0, 0.5, 0.5, 0.0, 1)
        row = posterior(fit, 1.0)
        self.assertAlmostEqual(row.p_component_a, 0.5, places=12)
        self.assertAlmostEqual(row.p_component_b, 0.5, places=12)

    def test_higher_threshold_never_grows_clean_set(self):
        """Test that raising theta towards 1 only removes clean values"""
        values = bimodal(np.random.default_rng(10), n=300, spread=0.3)
        fit = fit_gmm1d(values)
        previous = partition_by_posterior(values, fit, 0.5)
        for threshold in (0.6, 0.8, 0.9, 0.99, 0.999999):
            clean = partition_by_posterior(values, fit, threshold)
            # Check that no value joins the clean set
            self.assertFalse(np.any(clean & ~previous))
            previous = clean

    def test_smaller_mean_is_the_complement(self):
        """Test that the smaller-mean selection at 0.5 complements the larger-mean one"""
        values = bimodal(np.random.default_rng(11), n=200)
        larger = partition_by_posterior(values, None, 0.5, LARGER_MEAN)
        smaller = partition_by_posterior(values, None, 0.5, SMALLER_MEAN)
        np.testing.assert_array_equal(smaller, ~larger)


if __name__ == '__main__':
    unittest.main()
