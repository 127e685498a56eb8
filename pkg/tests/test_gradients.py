"""
Finite-difference checks of every loss term and of the gradient routing
"""
import unittest

import numpy as np

from idn_sample_selector.analysis.stage2 import class_frequencies, head_discrepancy_spec
from idn_sample_selector.model.losses import (
    DISCREPANCY,
    LossSpec,
    LossTerm,
    compute_loss,
    loss_and_gradients,
)
from idn_sample_selector.model.network import EXTRACTOR, HEADS, init_model
from idn_sample_selector.training.mixmatch import mixmatch_lite
from idn_sample_selector.training.supervised import cross_entropy_spec
from idn_sample_selector.training.trainer import build_semi_supervised_spec
from idn_sample_selector.utils.errors import NumericalError

STEP = 1e-5
TOLERANCE = 1e-4
COORDINATES = 20

# (input_dim, hidden_sizes, feature_dim, class_count, batch rows)
CONFIGS = [
    (3, (5,), 4, 2, 6),
    (4, (6, 5), 3, 3, 8),
    (5, (8,), 6, 4, 10),
]


def setup_case(index):
    input_dim, hidden, feature_dim, class_count, rows = CONFIGS[index]
    rng = np.random.default_rng(100 + index)
    model = init_model(input_dim, class_count, rng, np.random.default_rng(200 + index), hidden, feature_dim)
    batch = rng.normal(size=(rows, input_dim))
    labels = rng.integers(0, class_count, size=rows)
    labels[:class_count] = np.arange(class_count)
    return model, batch, labels, rng


class TestGradients(unittest.TestCase):
    """Test class for analytic gradients against central differences"""

    def check_group(self, model, batch, spec, group, grads, rng):
        params = [(name, array) for name, array, g, _ in model.named_parameters() if g == group]
        for _ in range(COORDINATES):
            name, array = params[rng.integers(len(params))]
            idx = tuple(rng.integers(0, s) for s in array.shape)
            original = array[idx]
            array[idx] = original + STEP
            plus = compute_loss(model, batch, spec, group=group).total
            array[idx] = original - STEP
            minus = compute_loss(model, batch, spec, group=group).total
            array[idx] = original
            numeric = (plus - minus) / (2 * STEP)
            analytic = grads[name][idx]
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
            self.assertLess(rel, TOLERANCE, f"{name}{idx}: analytic {analytic}, numeric {numeric}")

    def check_spec(self, model, batch, spec, rng, groups=(EXTRACTOR, HEADS)):
        _, grads = loss_and_gradients(model, batch, spec)
        for group in groups:
            self.check_group(model, batch, spec, group, grads, rng)
        return grads

    def test_cross_entropy(self):
        """Test CE on both heads"""
        for i in range(len(CONFIGS)):
            model, batch, labels, rng = setup_case(i)
            self.check_spec(model, batch, cross_entropy_spec(labels, model.class_count), rng)

    def test_head_discrepancy_minimization_term(self):
        """Test L_min, which only the heads receive"""
        for i in range(len(CONFIGS)):
            model, batch, labels, rng = setup_case(i)
            spec = head_discrepancy_spec(labels, class_frequencies(labels, model.class_count), 1.0)
            grads = self.check_spec(model, batch, spec, rng, groups=(HEADS,))
            for name, array, group, _ in model.named_parameters():
                if group == EXTRACTOR:
                    np.testing.assert_array_equal(grads[name], 0.0, err_msg=name)

    def test_extractor_discrepancy_term(self):
        """Test L_max, which only the extractor receives"""
        for i in range(len(CONFIGS)):
            model, batch, labels, rng = setup_case(i)
            weights = class_frequencies(labels, model.class_count).of(labels)
            spec = LossSpec([LossTerm("L_max", DISCREPANCY, np.arange(len(labels)), coef=0.7,
                                      weights=weights, routes={EXTRACTOR})])
            grads = self.check_spec(model, batch, spec, rng, groups=(EXTRACTOR,))
            for name, array, group, _ in model.named_parameters():
                if group == HEADS:
                    np.testing.assert_array_equal(grads[name], 0.0, err_msg=name)

    def test_semi_supervised_objective(self):
        """Test L_X + lambda_U * L_U, with and without the L_max term"""
        for i in range(len(CONFIGS)):
            model, batch, labels, rng = setup_case(i)
            half = len(labels) // 2
            mixed = mixmatch_lite(batch[:half], labels[:half], batch[half:], model,
                                  temperature=0.5, alpha=4.0, n_augment=2, jitter_std=0.05,
                                  rng=np.random.default_rng(i))
            frequencies = class_frequencies(labels, model.class_count)
            for lambda_max in (0.0, 0.3):
                data, spec = build_semi_supervised_spec(mixed, batch, labels, frequencies,
                                                        lambda_u=3.0, lambda_max=lambda_max)
                self.check_spec(model, data, spec, rng)

    def test_components_add_up(self):
        """Test that the total equals the sum of separately computed components"""
        model, batch, labels, _ = setup_case(2)
        mixed = mixmatch_lite(batch[:5], labels[:5], batch[5:], model, rng=np.random.default_rng(3))
        data, spec = build_semi_supervised_spec(mixed, batch, labels,
                                                class_frequencies(labels, model.class_count),
                                                lambda_u=25.0, lambda_max=0.1)
        evaluation, _ = loss_and_gradients(model, data, spec)
        separate = sum(compute_loss(model, data, LossSpec([term])).total for term in spec.terms)
        self.assertAlmostEqual(evaluation.total, separate, delta=1e-10)
        self.assertAlmostEqual(evaluation.total, sum(evaluation.components.values()), delta=1e-10)
        self.assertEqual(set(evaluation.components), {"L_X", "L_U", "L_max"})

    def test_non_finite_loss_names_term(self):
        """Test that a non-finite value raises NumericalError naming the term"""
        model, batch, labels, _ = setup_case(0)
        spec = cross_entropy_spec(labels, model.class_count, name="L_X")
        spec.terms[0].coef = np.inf
        with self.assertRaises(NumericalError) as ctx:
            loss_and_gradients(model, batch, spec)
        self.assertEqual(ctx.exception.term, "L_X")


if __name__ == '__main__':
    unittest.main()
