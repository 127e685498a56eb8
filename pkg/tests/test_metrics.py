"""
Unit tests for the metrics module
"""
import unittest

import numpy as np

from idn_sample_selector.analysis.metrics import (
    MetricRecord,
    auc,
    auc_or_none,
    class_distribution,
    score_histograms,
    selection_precision,
    selection_recall,
)
from idn_sample_selector.analysis.stage1 import Partition
from idn_sample_selector.utils.errors import InsufficientDataError, UndefinedAUCError


def partition(is_clean):
    is_clean = np.asarray(is_clean, dtype=bool)
    n = is_clean.size
    return Partition("S1", np.arange(n), is_clean, np.zeros(n), is_clean.astype(float))


class TestAuc(unittest.TestCase):
    """Test class for auc"""

    def test_known_values(self):
        """Test perfect, reversed and all-tied scores"""
        truth = [False, False, True, True]
        self.assertEqual(auc([0.1, 0.2, 0.8, 0.9], truth), 1.0)
        self.assertEqual(auc([0.9, 0.8, 0.2, 0.1], truth), 0.0)
        self.assertEqual(auc([0.5] * 4, truth), 0.5)
        self.assertEqual(auc([0.1, 0.5, 0.5, 0.9], truth), 0.875)

    def test_monotone_transform_invariance(self):
        """Test invariance under a strictly increasing transform"""
        rng = np.random.default_rng(0)
        scores = rng.normal(size=200)
        truth = rng.uniform(size=200) < 0.4
        self.assertAlmostEqual(auc(scores, truth), auc(np.exp(3 * scores) + 1, truth), places=12)

    def test_complement(self):
        """Test auc(s, t) + auc(s, not t) = 1"""
        rng = np.random.default_rng(1)
        scores = np.round(rng.normal(size=300), 1)
        truth = rng.uniform(size=300) < 0.3
        self.assertAlmostEqual(auc(scores, truth) + auc(scores, ~truth), 1.0, delta=1e-12)

    def test_random_scores(self):
        """Test that random scores give about 0.5"""
        rng = np.random.default_rng(2)
        self.assertAlmostEqual(auc(rng.uniform(size=10000), rng.uniform(size=10000) < 0.5), 0.5, delta=0.02)

    def test_single_class_is_undefined(self):
        """Test the undefined-AUC error"""
        with self.assertRaises(UndefinedAUCError):
            auc([0.1, 0.2], [True, True])
        self.assertIsNone(auc_or_none([0.1, 0.2], [False, False]))


class TestSelectionMetrics(unittest.TestCase):
    """Test class for class distributions, precision, recall and histograms"""

    def test_class_distribution(self):
        """Test one-class and balanced clean sets"""
        labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        np.testing.assert_allclose(class_distribution(partition([1, 0, 0, 0, 1, 0, 0, 0]), labels, 4),
                                   [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(class_distribution(partition([1] * 8), labels, 4), [0.25] * 4)
        with self.assertRaises(InsufficientDataError):
            class_distribution(partition([0] * 8), labels, 4)

    def test_precision_and_recall(self):
        """Test against hand-computed values"""
        selected = [True, True, False, False]
        truth = [True, False, True, True]
        self.assertEqual(selection_precision(selected, truth), 0.5)
        self.assertAlmostEqual(selection_recall(selected, truth), 1 / 3)
        self.assertTrue(np.isnan(selection_precision([False] * 4, truth)))

    def test_histograms(self):
        """Test bin counts and NaN handling"""
        hist = score_histograms([0.05, 0.95, 1.0, np.nan, 0.5], [True, False, True, True, False])
        self.assertEqual(len(hist["clean"]), 10)
        self.assertEqual(sum(hist["clean"]), 2)
        self.assertEqual(sum(hist["noisy"]), 2)
        self.assertEqual(hist["clean"][9], 1)

    def test_metric_record_rejects_non_finite(self):
        """Test MetricRecord validation"""
        self.assertEqual(MetricRecord("auc_s1", 0.9, 3, 0).value, 0.9)
        with self.assertRaises(ValueError):
            MetricRecord("auc_s1", float("nan"), 3, 0)


if __name__ == '__main__':
    unittest.main()
