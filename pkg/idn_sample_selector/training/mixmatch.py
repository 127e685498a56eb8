"""
Module for the MixMatch-style label guessing and mixup used in step 4

Inputs are feature vectors, so the K augmentations of an unlabeled sample are
additive Gaussian jitter.
"""
from dataclasses import dataclass

import numpy as np

from idn_sample_selector.model.network import forward, softmax_rows
from idn_sample_selector.training.supervised import one_hot
from idn_sample_selector.utils.errors import ConfigError


@dataclass
class MixedBatch:
    """Mixed inputs and targets, split back into the labeled and unlabeled parts"""

    inputs_x: np.ndarray
    targets_x: np.ndarray
    inputs_u: np.ndarray
    targets_u: np.ndarray
    guessed: np.ndarray
    lam: float


def sharpen(probs, temperature):
    """p^(1/T), renormalized; computed in log space so tiny T stays finite"""
    log_p = np.log(np.maximum(np.asarray(probs, dtype=np.float64), 1e-300))
    return softmax_rows(log_p / temperature)


def jittered_views(batch, n_augment, jitter_std, rng):
    return [batch + rng.normal(0.0, 1.0, size=batch.shape) * jitter_std for _ in range(n_augment)]


def guess_labels(model, views, temperature):
    """Sharpened average of both heads' predictions over all views"""
    avg = np.zeros((views[0].shape[0], model.class_count))
    for view in views:
        avg += forward(model, view).mean_probs
    return sharpen(avg / len(views), temperature)


def mixmatch_lite(batch_clean, labels_clean, batch_noisy, model, temperature=0.5, alpha=4.0,
                  n_augment=2, jitter_std=0.05, rng=None, lam=None):
    """
    Build mixed training targets from a labeled (clean) and an unlabeled (noisy) batch

    Args:
        batch_clean: (n_x, d) inputs treated as labeled
        labels_clean: Their noisy labels, used as ground truth
        batch_noisy: (n_u, d) inputs treated as unlabeled; may be empty
        model: ModelParams used for label guessing
        temperature: Sharpening temperature T
        alpha: Beta(alpha, alpha) mixup parameter
        n_augment: Number of jittered views K per unlabeled sample
        jitter_std: Standard deviation of the jitter
        rng: Generator for jitter, the Beta draw and the mixing permutation
        lam: Fixed mixing coefficient; drawn when None

    Returns:
        MixedBatch
    """
    if n_augment < 1:
        raise ConfigError(f"must be at least 1, got {n_augment}", field="train.n_augment")
    if rng is None:
        rng = np.random.default_rng(0)
    class_count = model.class_count
    targets_x = one_hot(labels_clean, class_count)
    n_x = batch_clean.shape[0]

    if batch_noisy is not None and batch_noisy.shape[0] > 0:
        views = jittered_views(batch_noisy, n_augment, jitter_std, rng)
        guessed = guess_labels(model, views, temperature)
        all_inputs = np.vstack([batch_clean, *views])
        all_targets = np.vstack([targets_x] + [guessed] * n_augment)
    else:
        guessed = np.zeros((0, class_count))
        all_inputs = batch_clean
        all_targets = targets_x

    if lam is None:
        lam = rng.beta(alpha, alpha)
        lam = max(lam, 1.0 - lam)
    perm = rng.permutation(all_inputs.shape[0])
    mixed_inputs = lam * all_inputs + (1.0 - lam) * all_inputs[perm]
    mixed_targets = lam * all_targets + (1.0 - lam) * all_targets[perm]
    return MixedBatch(
        inputs_x=mixed_inputs[:n_x],
        targets_x=mixed_targets[:n_x],
        inputs_u=mixed_inputs[n_x:],
        targets_u=mixed_targets[n_x:],
        guessed=guessed,
        lam=float(lam),
    )
