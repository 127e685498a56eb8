"""
Module for plain cross-entropy training on both heads
"""
import numpy as np

from idn_sample_selector.model.losses import CROSS_ENTROPY, LossSpec, LossTerm
from idn_sample_selector.model.network import predict_proba
from idn_sample_selector.model.optimizer import backward_step


def one_hot(labels, class_count):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, class_count))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy_spec(labels, class_count, name="CE"):
    """Cross-entropy on both heads (summed) for a batch whose rows are all labeled"""
    term = LossTerm(
        name=name,
        kind=CROSS_ENTROPY,
        rows=np.arange(len(labels)),
        targets=one_hot(labels, class_count),
    )
    return LossSpec([term])


def run_cross_entropy_epoch(model, optim, features, labels, batch_size, rng):
    """
    One shuffled pass of cross-entropy training

    Args:
        model: ModelParams, updated in place
        optim: OptimState
        features: (n, d) inputs
        labels: Integer targets, length n
        batch_size: Mini-batch size
        rng: Generator used for the shuffle

    Returns:
        Mean loss over the epoch's batches
    """
    order = rng.permutation(len(labels))
    losses = []
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        spec = cross_entropy_spec(labels[idx], model.class_count)
        _, evaluation = backward_step(model, optim, features[idx], spec)
        losses.append(evaluation.total)
    return float(np.mean(losses)) if losses else 0.0


def accuracy(model, features, labels):
    """Accuracy of the averaged two-head prediction"""
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(np.argmax(predict_proba(model, features), axis=1) == labels))
