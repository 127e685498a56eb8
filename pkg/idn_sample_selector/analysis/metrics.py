"""
Module for clean-identification and classification metrics
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from idn_sample_selector.utils.errors import InsufficientDataError, UndefinedAUCError


@dataclass
class MetricRecord:
    metric: str
    value: float
    epoch: int
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.metric} is not finite: {self.value}")


def auc(scores, positive):
    """
    Area under the ROC curve via the Mann-Whitney U statistic, ties counted 0.5

    Args:
        scores: Higher means more likely positive
        positive: Boolean ground truth per score

    Raises:
        UndefinedAUCError: if the truth holds only one class
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(np.count_nonzero(positive))
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined with {n_pos} positive and {n_neg} negative samples")
    ranks = rankdata(scores, method="average")
    u = np.sum(ranks[positive]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_or_none(scores, positive):
    try:
        return auc(scores, positive)
    except UndefinedAUCError:
        return None


def class_distribution(partition, noisy_labels, class_count):
    """
    Share of the clean set carrying each noisy label

    Raises:
        InsufficientDataError: if the clean set is empty
    """
    labels = np.asarray(noisy_labels, dtype=np.int64)[partition.is_clean]
    if labels.size == 0:
        raise InsufficientDataError("clean set is empty")
    return np.bincount(labels, minlength=class_count) / labels.size


def selection_precision(is_selected, is_truly_clean):
    """Fraction of the selected set whose label is correct (nan if nothing selected)"""
    is_selected = np.asarray(is_selected, dtype=bool)
    if not is_selected.any():
        return float("nan")
    return float(np.mean(np.asarray(is_truly_clean, dtype=bool)[is_selected]))


def selection_recall(is_selected, is_truly_clean):
    """Fraction of correctly labeled samples that were selected"""
    truth = np.asarray(is_truly_clean, dtype=bool)
    if not truth.any():
        return float("nan")
    return float(np.mean(np.asarray(is_selected, dtype=bool)[truth]))


def score_histograms(normalized_scores, is_truly_clean, bins=10):
    """
    Histograms of normalized scores on [0, 1], split by hidden cleanliness

    NaN scores (samples outside the scored set) are ignored.
    """
    scores = np.asarray(normalized_scores, dtype=np.float64)
    truth = np.asarray(is_truly_clean, dtype=bool)
    keep = np.isfinite(scores)
    edges = np.linspace(0.0, 1.0, bins + 1)
    clean, _ = np.histogram(scores[keep & truth], bins=edges)
    noisy, _ = np.histogram(scores[keep & ~truth], bins=edges)
    return {"clean": clean.tolist(), "noisy": noisy.tolist()}
