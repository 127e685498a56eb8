"""
Module for label-noise injectors

All injectors return a new LabeledDataset that shares features and true labels
with the input; only the noisy labels change.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from idn_sample_selector.model.network import init_model, predict_proba
from idn_sample_selector.model.optimizer import OptimState
from idn_sample_selector.training.supervised import run_cross_entropy_epoch
from idn_sample_selector.utils.errors import ConfigError
from idn_sample_selector.utils.seeding import SeedStreams

logger = logging.getLogger(__name__)

CLASSIFICATION = "classification"
BOUNDARY = "boundary"
SYMMETRIC = "symmetric"
NONE = "none"
NOISE_KINDS = (CLASSIFICATION, BOUNDARY, SYMMETRIC, NONE)


@dataclass
class NoiseSpec:
    """Which injector to apply and with what ratio (r for classification, eta otherwise)"""

    kind: str = BOUNDARY
    ratio: float = 0.4
    probe_epochs: int = 20

    def validate(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}", field="noise.kind")
        if not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"must be in [0, 1], got {self.ratio}", field="noise.ratio")
        if self.kind in (BOUNDARY, SYMMETRIC) and self.ratio >= 1.0:
            raise ConfigError(f"must be below 1 for {self.kind} noise", field="noise.ratio")
        if self.probe_epochs < 1:
            raise ConfigError("must be at least 1", field="noise.probe_epochs")
        return self


def _check_rate(value, name, allow_one=False):
    upper_ok = value <= 1.0 if allow_one else value < 1.0
    if not (value >= 0.0 and upper_ok):
        raise ConfigError(f"{name} out of range: {value}", field=name)


def probe_candidates(dataset, probe_epochs=20, seed=0, batch_size=64, learning_rate=0.02):
    """
    Train a probe classifier on the true labels and find each sample's most likely
    wrong class

    Predictions are recorded after every epoch and averaged.

    Returns:
        Tuple of (candidate labels, candidate probabilities, averaged predictions)
    """
    streams = SeedStreams(seed)
    model = init_model(dataset.dim, dataset.class_count,
                       streams.generator("probe-init"), streams.generator("probe-head2"))
    optim = OptimState.for_model(model, learning_rate)
    shuffle_rng = streams.generator("probe-shuffle")
    mean_probs = np.zeros((len(dataset), dataset.class_count))
    for epoch in range(probe_epochs):
        loss = run_cross_entropy_epoch(model, optim, dataset.features, dataset.true_labels,
                                       batch_size, shuffle_rng)
        mean_probs += predict_proba(model, dataset.features)
        logger.debug("probe epoch %d loss %.4f", epoch + 1, loss)
    mean_probs /= probe_epochs

    masked = mean_probs.copy()
    masked[np.arange(len(dataset)), dataset.true_labels] = -np.inf
    candidates = np.argmax(masked, axis=1)
    candidate_probs = masked[np.arange(len(dataset)), candidates]
    return candidates, candidate_probs, mean_probs


def apply_classification_noise(dataset, probe_epochs=20, r=0.4, seed=0):
    """
    Flip the floor(r * N) samples whose best wrong-class probability is largest

    Ties are broken by ascending sample id.

    Args:
        dataset: Clean LabeledDataset
        probe_epochs: Epochs of probe training
        r: Fraction of samples to flip, in [0, 1]
        seed: Seed for the probe model and its shuffles

    Returns:
        LabeledDataset with exactly floor(r * N) flipped labels
    """
    _check_rate(r, "noise.ratio", allow_one=True)
    noisy = dataset.true_labels.copy()
    n_flip = int(math.floor(r * len(dataset) + 1e-9))
    if n_flip == 0:
        return dataset.with_noisy_labels(noisy)
    candidates, candidate_probs, _ = probe_candidates(dataset, probe_epochs, seed)
    order = np.lexsort((dataset.ids, -candidate_probs))
    flip = order[:n_flip]
    noisy[flip] = candidates[flip]
    logger.info("classification noise: flipped %d of %d samples", n_flip, len(dataset))
    return dataset.with_noisy_labels(noisy)


def boundary_margins(dataset):
    """
    Distance to the nearest other class center minus distance to the own center

    Uses the generating centers when present, otherwise the per-class means of the
    true-labeled features.

    Returns:
        Tuple of (margins, nearest other class per sample)
    """
    centers = dataset.centers
    if centers is None:
        centers = np.vstack([
            dataset.features[dataset.true_labels == c].mean(axis=0)
            for c in range(dataset.class_count)
        ])
    dists = cdist(dataset.features, centers)
    rows = np.arange(len(dataset))
    own = dists[rows, dataset.true_labels].copy()
    dists[rows, dataset.true_labels] = np.inf
    nearest_other = np.argmin(dists, axis=1)
    return dists[rows, nearest_other] - own, nearest_other


def apply_boundary_idn(dataset, eta=0.4, seed=0):
    """
    Instance-dependent noise concentrated near class boundaries

    round(eta * N) samples are drawn without replacement with probability
    proportional to their inverted margin (max margin minus own margin) and
    relabeled to their nearest other class.
    """
    _check_rate(eta, "noise.ratio")
    noisy = dataset.true_labels.copy()
    n_flip = int(round(eta * len(dataset)))
    if n_flip == 0:
        return dataset.with_noisy_labels(noisy)
    margins, targets = boundary_margins(dataset)
    inverted = margins.max() - margins
    # every sample stays eligible, the widest-margin one with negligible weight
    inverted = inverted + 1e-12 * max(float(inverted.max()), 1.0)
    rng = SeedStreams(seed).generator("boundary-idn")
    flip = rng.choice(len(dataset), size=n_flip, replace=False, p=inverted / inverted.sum())
    noisy[flip] = targets[flip]
    logger.info("boundary noise: flipped %d of %d samples", n_flip, len(dataset))
    return dataset.with_noisy_labels(noisy)


def apply_symmetric_noise(dataset, eta=0.4, seed=0):
    """Flip each label with probability eta to a uniformly chosen other class"""
    _check_rate(eta, "noise.ratio")
    rng = SeedStreams(seed).generator("symmetric-noise")
    n = len(dataset)
    flip = rng.random(n) < eta
    shift = rng.integers(1, dataset.class_count, size=n)
    noisy = np.where(flip, (dataset.true_labels + shift) % dataset.class_count, dataset.true_labels)
    logger.info("symmetric noise: flipped %d of %d samples", int(flip.sum()), n)
    return dataset.with_noisy_labels(noisy)


def apply_noise(dataset, spec, seed):
    """Dispatch on NoiseSpec.kind"""
    spec.validate()
    if spec.kind == CLASSIFICATION:
        return apply_classification_noise(dataset, spec.probe_epochs, spec.ratio, seed)
    if spec.kind == BOUNDARY:
        return apply_boundary_idn(dataset, spec.ratio, seed)
    if spec.kind == SYMMETRIC:
        return apply_symmetric_noise(dataset, spec.ratio, seed)
    return dataset.with_noisy_labels(dataset.true_labels)
