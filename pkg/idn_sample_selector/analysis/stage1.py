"""
Module for feature-based clustering (stage 1)

Samples are scored by the cosine similarity of their normalized feature to the
center of their noisy label's class; a GMM per class splits each class into a
high-similarity (clean) and a low-similarity (noisy) part. Classes whose split is
too uncertain, or too small to fit, are pooled into one aggregate group first.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import entr

from idn_sample_selector.analysis.gmm import (
    LARGER_MEAN,
    clean_posterior,
    fit_gmm1d,
)
from idn_sample_selector.model.network import forward, l2_normalize_rows
from idn_sample_selector.utils.errors import (
    ConfigError,
    DegenerateCenterError,
    DegenerateDataError,
    InsufficientDataError,
)

logger = logging.getLogger(__name__)

AGGREGATE_GROUP = -1
NOISY_LABEL = "noisy-label"
PREDICTED_LABEL = "predicted-label"
STAGE1 = "S1"
STAGE2 = "S2"
MIN_CLASS_MEMBERS = 8


@dataclass
class ClassCenters:
    """Unit-norm class centers; rows of absent (empty) classes are zero and flagged"""

    centers: np.ndarray
    present: np.ndarray
    member_counts: np.ndarray
    membership_source: str = NOISY_LABEL


@dataclass
class Partition:
    """
    Per-sample clean/noisy assignment and the score and posterior behind it

    Arrays are aligned with the dataset's sample order.
    """

    stage: str
    ids: np.ndarray
    is_clean: np.ndarray
    scores: np.ndarray
    posterior_clean: np.ndarray
    class_grouping: Dict[int, int] = field(default_factory=dict)
    normalized_scores: Optional[np.ndarray] = None
    fits: Dict[str, dict] = field(default_factory=dict)
    fallback: Optional[str] = None

    def __len__(self):
        return self.is_clean.size

    @property
    def clean_index(self):
        return np.flatnonzero(self.is_clean)

    @property
    def noisy_index(self):
        return np.flatnonzero(~self.is_clean)

    @property
    def n_clean(self):
        return int(np.count_nonzero(self.is_clean))

    def relabeled(self, stage, fallback=None):
        """Same assignment presented as another stage's partition"""
        return Partition(
            stage=stage,
            ids=self.ids,
            is_clean=self.is_clean.copy(),
            scores=self.scores.copy(),
            posterior_clean=self.posterior_clean.copy(),
            class_grouping=dict(self.class_grouping),
            normalized_scores=None if self.normalized_scores is None else self.normalized_scores.copy(),
            fits=dict(self.fits),
            fallback=fallback,
        )

    @classmethod
    def everything_clean(cls, ids, stage):
        """Partition that trusts every label; used when stage 1 is bypassed"""
        n = len(ids)
        return cls(
            stage=stage,
            ids=np.asarray(ids),
            is_clean=np.ones(n, dtype=bool),
            scores=np.ones(n),
            posterior_clean=np.ones(n),
        )


def compute_centers(features, membership_labels, class_count, membership_source=NOISY_LABEL):
    """
    Class centers on the unit sphere: normalized sum of normalized member features

    Args:
        features: (n, feature_dim) extractor outputs, no zero rows
        membership_labels: Class id per sample deciding membership
        class_count: Number of classes C
        membership_source: Recorded on the result

    Returns:
        ClassCenters

    Raises:
        DegenerateFeatureError: a zero feature row
        DegenerateCenterError: a non-empty class whose normalized features sum to zero
    """
    normalized = l2_normalize_rows(features)
    labels = np.asarray(membership_labels, dtype=np.int64)
    sums = np.zeros((class_count, normalized.shape[1]))
    np.add.at(sums, labels, normalized)
    counts = np.bincount(labels, minlength=class_count)
    centers = np.zeros_like(sums)
    for c in np.flatnonzero(counts):
        norm = np.linalg.norm(sums[c])
        if norm <= 1e-12:
            raise DegenerateCenterError(int(c))
        centers[c] = sums[c] / norm
    return ClassCenters(centers, counts > 0, counts, membership_source)


def compute_similarities(features, centers, noisy_labels):
    """
    Cosine similarity of each sample to the center of its noisy label

    Returns:
        Array of similarities in [-1, 1]
    """
    labels = np.asarray(noisy_labels, dtype=np.int64)
    missing = np.setdiff1d(np.unique(labels), np.flatnonzero(centers.present))
    if missing.size:
        raise DegenerateCenterError(int(missing[0]), f"class {int(missing[0])}: no center available")
    normalized = l2_normalize_rows(features)
    similarities = np.einsum("ij,ij->i", normalized, centers.centers[labels])
    return np.clip(similarities, -1.0, 1.0)


def min_max_normalize(values):
    """Scale to [0, 1]; constant input maps to zeros"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    span = values.max() - values.min()
    if span <= 1e-12:
        return np.zeros_like(values)
    return (values - values.min()) / span


def class_entropy(clean_posteriors):
    """Average binary (clean / noisy) entropy in nats"""
    p = np.asarray(clean_posteriors, dtype=np.float64)
    return float(np.mean(entr(p) + entr(1.0 - p)))


def aggregate_rare_classes(per_class_posteriors, theta_agg=0.4):
    """
    Decide which classes are pooled into the aggregate group

    Args:
        per_class_posteriors: Class id -> clean posteriors of its members, or None
            when that class's fit raised (too few samples, or degenerate scores)
        theta_agg: Entropy threshold; classes above it are aggregated

    Returns:
        Dict class id -> group id (itself, or AGGREGATE_GROUP)
    """
    grouping = {}
    for c, posts in sorted(per_class_posteriors.items()):
        if posts is None:
            grouping[c] = AGGREGATE_GROUP
            continue
        entropy = class_entropy(posts)
        grouping[c] = AGGREGATE_GROUP if entropy > theta_agg else c
        logger.debug("class %d entropy %.4f -> group %d", c, entropy, grouping[c])
    return grouping


def _try_fit(values, max_iter, tol):
    """Fit a GMM to one class or group, or return None when it is too small or degenerate"""
    try:
        return fit_gmm1d(values, max_iter=max_iter, tol=tol, min_values=MIN_CLASS_MEMBERS)
    except (InsufficientDataError, DegenerateDataError) as e:
        logger.debug("gmm fit skipped: %s", e)
        return None


def stage1_partition(model, dataset, theta=0.5, theta_agg=0.4, membership_source=NOISY_LABEL,
                     max_iter=100, tol=1e-6):
    """
    Steps 1-2: centers, similarities, per-class GMMs, aggregation, threshold

    Args:
        model: Warmed-up ModelParams
        dataset: LabeledDataset
        theta: Clean-posterior threshold
        theta_agg: Aggregation entropy threshold
        membership_source: NOISY_LABEL or PREDICTED_LABEL for center membership

    Returns:
        Partition with stage "S1"

    Raises:
        DegenerateDataError: no class or group could be fitted at all
    """
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"must be in (0, 1), got {theta}", field="train.theta")
    result = forward(model, dataset.features)
    labels = dataset.noisy_labels
    class_count = dataset.class_count

    if membership_source == NOISY_LABEL:
        centers = compute_centers(result.features, labels, class_count, NOISY_LABEL)
    elif membership_source == PREDICTED_LABEL:
        predicted = np.argmax(result.mean_probs, axis=1)
        centers = compute_centers(result.features, predicted, class_count, PREDICTED_LABEL)
        fallback = compute_centers(result.features, labels, class_count, NOISY_LABEL)
        # classes nobody is predicted as borrow their noisy-label center
        for c in np.flatnonzero(~centers.present & fallback.present):
            centers.centers[c] = fallback.centers[c]
            centers.present[c] = True
    else:
        raise ConfigError(f"unknown membership source {membership_source!r}", field="train.center_source")

    scores = compute_similarities(result.features, centers, labels)
    normalized = np.zeros_like(scores)
    members = {c: np.flatnonzero(labels == c) for c in range(class_count)}
    members = {c: idx for c, idx in members.items() if idx.size}
    for c, idx in members.items():
        normalized[idx] = min_max_normalize(scores[idx])

    posterior = np.zeros_like(scores)
    per_class_posteriors = {}
    fits = {}
    for c, idx in members.items():
        fit = _try_fit(normalized[idx], max_iter, tol)
        if fit is None:
            # too few members or degenerate scores: the class joins the pooled group
            per_class_posteriors[c] = None
            continue
        per_class_posteriors[c] = clean_posterior(fit, normalized[idx], LARGER_MEAN)
        fits[f"class_{c}"] = fit.to_dict()

    grouping = aggregate_rare_classes(per_class_posteriors, theta_agg)
    aggregated = [c for c, g in grouping.items() if g == AGGREGATE_GROUP]
    for c, g in grouping.items():
        if g != AGGREGATE_GROUP:
            posterior[members[c]] = per_class_posteriors[c]

    fitted_any = any(g != AGGREGATE_GROUP for g in grouping.values())
    if aggregated:
        pooled = np.concatenate([members[c] for c in aggregated])
        fit = _try_fit(normalized[pooled], max_iter, tol)
        if fit is None:
            # nothing to separate within the pooled group: keep its labels
            posterior[pooled] = 1.0
            logger.debug("aggregate group of %d samples could not be fitted; kept as clean", pooled.size)
        else:
            fitted_any = True
            posterior[pooled] = clean_posterior(fit, normalized[pooled], LARGER_MEAN)
            fits["aggregate"] = fit.to_dict()
        logger.debug("aggregated classes %s (%d samples)", aggregated, pooled.size)

    if not fitted_any:
        raise DegenerateDataError("similarity scores are degenerate for every class")

    return Partition(
        stage=STAGE1,
        ids=dataset.ids,
        is_clean=posterior > theta,
        scores=scores,
        posterior_clean=posterior,
        class_grouping={int(c): int(g) for c, g in grouping.items()},
        normalized_scores=normalized,
        fits=fits,
    )


class FeatureClusterer:
    """Stage-1 selector bound to its thresholds"""

    def __init__(self, theta=0.5, theta_agg=0.4, membership_source=NOISY_LABEL):
        """
        Args:
            theta: Clean-posterior threshold
            theta_agg: Aggregation entropy threshold
            membership_source: Which labels decide center membership
        """
        self.theta = theta
        self.theta_agg = theta_agg
        self.membership_source = membership_source

    def partition(self, model, dataset):
        return stage1_partition(model, dataset, self.theta, self.theta_agg, self.membership_source)
