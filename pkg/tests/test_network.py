"""
Unit tests for the network module
"""
import math
import unittest

import numpy as np

from idn_sample_selector.model.network import (
    DenseLayer,
    ModelParams,
    as_dense,
    forward,
    init_model,
    l2_normalize,
    l2_normalize_rows,
    predict_proba,
    softmax_row,
)
from idn_sample_selector.utils.errors import DegenerateFeatureError, DimensionError, NumericalError


def make_model(seed=0, input_dim=4, class_count=3, hidden_sizes=(6,), feature_dim=5):
    return init_model(input_dim, class_count, np.random.default_rng(seed),
                      np.random.default_rng(seed + 1000), hidden_sizes, feature_dim)


class TestNetwork(unittest.TestCase):
    """Test class for the forward pass and its helpers"""

    def setUp(self):
        """Set up test fixtures"""
        self.model = make_model()
        self.batch = np.random.default_rng(1).normal(size=(7, 4))

    def test_forward_shapes_and_probabilities(self):
        """Test that forward returns features, logits and normalized probabilities"""
        result = forward(self.model, self.batch)
        self.assertEqual(result.features.shape, (7, 5))
        self.assertEqual(result.logits1.shape, (7, 3))
        self.assertEqual(result.probs2.shape, (7, 3))
        np.testing.assert_allclose(result.probs1.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(result.probs2.sum(axis=1), 1.0, atol=1e-12)

    def test_forward_matches_straight_line_arithmetic(self):
        """Test both heads' probabilities against a loop-by-loop evaluation"""
        model = make_model(seed=3, hidden_sizes=(6, 4))
        batch = np.random.default_rng(2).normal(size=(5, 4))
        layers = [(layer.weight, layer.bias) for layer in model.extractor]
        result = forward(model, batch)
        for i, row in enumerate(batch):
            h = [float(v) for v in row]
            for k, (weight, bias) in enumerate(layers):
                out = []
                for j in range(weight.shape[1]):
                    total = float(bias[j])
                    for m in range(weight.shape[0]):
                        total += h[m] * float(weight[m, j])
                    out.append(max(total, 0.0) if k < len(layers) - 1 else total)
                h = out
            for head, probs in ((model.head1, result.probs1), (model.head2, result.probs2)):
                logits = [float(head.bias[j]) + sum(h[m] * float(head.weight[m, j]) for m in range(len(h)))
                          for j in range(head.weight.shape[1])]
                top = max(logits)
                exps = [math.exp(z - top) for z in logits]
                expected = [e / sum(exps) for e in exps]
                np.testing.assert_allclose(probs[i], expected, rtol=0, atol=1e-10)

    def test_prediction_invariant_to_head_order(self):
        """Test that swapping the heads leaves the averaged prediction unchanged"""
        swapped = ModelParams(self.model.extractor, self.model.head2, self.model.head1)
        np.testing.assert_allclose(predict_proba(self.model, self.batch),
                                   predict_proba(swapped, self.batch), atol=1e-15)

    def test_predict_proba_chunking(self):
        """Test that chunked prediction matches one big forward pass"""
        full = forward(self.model, self.batch).mean_probs
        np.testing.assert_allclose(predict_proba(self.model, self.batch, chunk_size=2), full)

    def test_l2_normalize(self):
        """Test unit norm output and the zero-vector error"""
        self.assertAlmostEqual(np.linalg.norm(l2_normalize([3.0, 4.0])), 1.0)
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8])
        with self.assertRaises(DegenerateFeatureError):
            l2_normalize([0.0, 0.0])
        with self.assertRaises(DegenerateFeatureError):
            l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_softmax_is_stable(self):
        """Test softmax on huge logits"""
        np.testing.assert_allclose(softmax_row(np.array([1000.0, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(softmax_row(np.array([5.0, 5.0, 5.0])), [1 / 3] * 3)

    def test_as_dense_validation(self):
        """Test shape and finiteness checks"""
        with self.assertRaises(DimensionError):
            as_dense(np.zeros((2, 3)), cols=4)
        with self.assertRaises(DimensionError):
            as_dense(np.zeros(3))
        with self.assertRaises(NumericalError):
            as_dense(np.array([[1.0, np.nan]]))

    def test_model_shape_checks(self):
        """Test that mismatched heads are rejected"""
        extractor = [DenseLayer(np.zeros((3, 4)), np.zeros(4))]
        with self.assertRaises(DimensionError):
            ModelParams(extractor, DenseLayer(np.zeros((4, 2)), np.zeros(2)),
                        DenseLayer(np.zeros((4, 3)), np.zeros(3)))
        with self.assertRaises(DimensionError):
            ModelParams(extractor, DenseLayer(np.zeros((5, 2)), np.zeros(2)),
                        DenseLayer(np.zeros((5, 2)), np.zeros(2)))
        with self.assertRaises(DimensionError):
            ModelParams(extractor, DenseLayer(np.zeros((4, 1)), np.zeros(1)),
                        DenseLayer(np.zeros((4, 1)), np.zeros(1)))

    def test_init_model(self):
        """Test deterministic initialization with distinct heads"""
        again = make_model()
        for (name, a, _, _), (_, b, _, _) in zip(self.model.named_parameters(), again.named_parameters()):
            np.testing.assert_array_equal(a, b, err_msg=name)
        self.assertFalse(np.allclose(self.model.head1.weight, self.model.head2.weight))
        self.assertTrue(all(np.all(layer.bias == 0.0) for layer in self.model.extractor))
        self.assertEqual(self.model.input_dim, 4)
        self.assertEqual(self.model.feature_dim, 5)
        self.assertEqual(self.model.class_count, 3)

    def test_named_parameters_are_live_views(self):
        """Test that parameters returned by named_parameters alias the model"""
        copy = self.model.copy()
        name, array, group, is_weight = copy.named_parameters()[0]
        self.assertEqual(name, "extractor.0.weight")
        self.assertTrue(is_weight)
        array += 1.0
        np.testing.assert_array_equal(copy.extractor[0].weight, self.model.extractor[0].weight + 1.0)


if __name__ == '__main__':
    unittest.main()
