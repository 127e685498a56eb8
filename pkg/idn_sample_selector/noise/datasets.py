"""
Module for labeled datasets and the Gaussian-blob generator
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from idn_sample_selector.utils.errors import ConfigError, DimensionError
from idn_sample_selector.utils.seeding import SeedStreams

logger = logging.getLogger(__name__)

MIN_CLASS_SIZE = 8


@dataclass
class LabeledDataset:
    """
    Feature matrix with hidden true labels, observed noisy labels and stable ids

    `centers` holds the generating class centers when the dataset came from
    make_blobs; it is not part of the file format.
    """

    features: np.ndarray
    true_labels: np.ndarray
    noisy_labels: np.ndarray
    ids: np.ndarray
    class_count: int
    centers: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise DimensionError("features must be a 2-D matrix")
        for name in ("true_labels", "noisy_labels", "ids"):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"{name} must have length {n}")
        for name in ("true_labels", "noisy_labels"):
            labels = getattr(self, name)
            if n and (labels.min() < 0 or labels.max() >= self.class_count):
                raise ConfigError(f"labels outside [0, {self.class_count})", field=name)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def is_clean(self):
        """Hidden ground truth: True where the observed label is correct"""
        return self.noisy_labels == self.true_labels

    @property
    def noise_rate(self):
        return float(np.mean(~self.is_clean)) if len(self) else 0.0

    def with_noisy_labels(self, noisy_labels):
        """Copy sharing features and true labels, with new observed labels"""
        return replace(self, noisy_labels=np.asarray(noisy_labels, dtype=np.int64).copy())

    def subset(self, index):
        index = np.asarray(index)
        return LabeledDataset(
            self.features[index],
            self.true_labels[index],
            self.noisy_labels[index],
            self.ids[index],
            self.class_count,
            self.centers,
        )

    def class_counts(self, labels="noisy"):
        source = self.noisy_labels if labels == "noisy" else self.true_labels
        return np.bincount(source, minlength=self.class_count)


def class_sizes(n_per_class, class_count, imbalance_ratios=None):
    """
    Per-class sample counts

    With imbalance ratios the total n_per_class * class_count is split by the
    normalized ratios (floored); without them every class gets n_per_class.
    """
    if imbalance_ratios is None or len(imbalance_ratios) == 0:
        sizes = np.full(class_count, int(n_per_class))
    else:
        ratios = np.asarray(imbalance_ratios, dtype=np.float64)
        if ratios.shape != (class_count,) or np.any(ratios <= 0):
            raise ConfigError(
                f"need {class_count} positive ratios, got {list(imbalance_ratios)}",
                field="imbalance_ratios",
            )
        total = int(n_per_class) * class_count
        sizes = np.floor(ratios / ratios.sum() * total + 1e-9).astype(np.int64)
    small = np.flatnonzero(sizes < MIN_CLASS_SIZE)
    if small.size:
        raise ConfigError(
            f"class {int(small[0])} would have {int(sizes[small[0]])} samples; "
            f"at least {MIN_CLASS_SIZE} are required",
            field="n_per_class",
        )
    return sizes


def make_blobs(n_per_class, class_count, dim, center_spread=1.5, cluster_std=1.0,
               imbalance_ratios: Optional[Sequence[float]] = None, seed=0, split="train"):
    """
    Draw isotropic Gaussian clusters, one per class

    Class centers depend only on `seed`; samples come from a per-split stream, so
    the "train" and "test" splits share centers but not samples.

    Args:
        n_per_class: Samples per class (before imbalance)
        class_count: Number of classes
        dim: Feature dimension
        center_spread: Standard deviation of the center coordinates
        cluster_std: Standard deviation of samples around their center
        imbalance_ratios: Optional per-class ratios
        seed: Root seed
        split: Sample stream name

    Returns:
        LabeledDataset with noisy_labels equal to true_labels
    """
    if class_count < 2:
        raise ConfigError("need at least 2 classes", field="class_count")
    if dim < 1:
        raise ConfigError("must be positive", field="dim")
    if cluster_std < 0:
        raise ConfigError("must be non-negative", field="cluster_std")
    sizes = class_sizes(n_per_class, class_count, imbalance_ratios)
    streams = SeedStreams(seed)
    centers = streams.generator("blob-centers").normal(0.0, center_spread, size=(class_count, dim))
    rng = streams.generator(f"blob-samples-{split}")

    labels = np.repeat(np.arange(class_count), sizes)
    features = centers[labels] + rng.normal(0.0, 1.0, size=(labels.size, dim)) * cluster_std
    order = rng.permutation(labels.size)
    features, labels = features[order], labels[order]
    logger.debug("make_blobs split=%s sizes=%s", split, sizes.tolist())
    return LabeledDataset(
        features=features,
        true_labels=labels,
        noisy_labels=labels.copy(),
        ids=np.arange(labels.size),
        class_count=class_count,
        centers=centers,
    )
