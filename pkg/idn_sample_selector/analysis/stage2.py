"""
Module for consistency-based classification (stage 2)

The two heads are pushed apart on the stage-1 clean set with the extractor frozen;
samples on which they still agree are kept as clean.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from idn_sample_selector.analysis.gmm import SMALLER_MEAN, clean_posterior, fit_gmm1d
from idn_sample_selector.analysis.stage1 import STAGE2, Partition, min_max_normalize
from idn_sample_selector.model.losses import CROSS_ENTROPY, DISCREPANCY, LossSpec, LossTerm
from idn_sample_selector.model.network import HEADS, as_dense, forward, softmax_rows
from idn_sample_selector.model.optimizer import OptimState, backward_step
from idn_sample_selector.training.supervised import one_hot
from idn_sample_selector.utils.errors import (
    ConfigError,
    DegenerateDataError,
    DimensionError,
    InsufficientDataError,
)

logger = logging.getLogger(__name__)

RAW_SCORE = "raw"
WEIGHTED_SCORE = "weighted"


@dataclass
class ClassFrequencies:
    """Fraction of the dataset carrying each noisy label"""

    weights: np.ndarray

    def of(self, labels):
        return self.weights[np.asarray(labels, dtype=np.int64)]


@dataclass
class ConsistencyReport:
    """Discrepancies over the stage-1 clean set after head maximization"""

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    discrepancy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    weighted: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_max: int = 0
    lambda_min: float = 0.0
    mean_weighted_before: float = float("nan")
    mean_weighted_after: float = float("nan")
    loss_min: float = 0.0
    agreement_before: Tuple[float, float] = (float("nan"), float("nan"))
    agreement_after: Tuple[float, float] = (float("nan"), float("nan"))
    rejected_steps: int = 0
    final_learning_rate: float = float("nan")
    restored: bool = False
    skipped: Optional[str] = None


def discrepancy(p1, p2):
    """
    L1 distance between two probability vectors (or row-wise for matrices)

    Returns:
        Float in [0, 2], or an array of them for 2-D input
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape:
        raise DimensionError(f"probability shapes differ: {p1.shape} vs {p2.shape}")
    d = np.sum(np.abs(p1 - p2), axis=-1)
    return float(d) if d.ndim == 0 else d


def weighted_discrepancy(p1, p2, w):
    """D* = w * D(p1, p2)"""
    w_arr = np.asarray(w, dtype=np.float64)
    if np.any(w_arr < 0.0) or np.any(w_arr > 1.0):
        raise ConfigError(f"class weight outside [0, 1]: {w}", field="w")
    result = w_arr * discrepancy(p1, p2)
    return float(result) if np.ndim(result) == 0 else result


def class_frequencies(noisy_labels, class_count=None):
    """
    w_c = N_c / N over the noisy labels

    Args:
        noisy_labels: Non-empty sequence of class ids
        class_count: Number of classes (defaults to max label + 1)
    """
    labels = np.asarray(noisy_labels, dtype=np.int64)
    if labels.size == 0:
        raise InsufficientDataError("class frequencies need at least one label")
    counts = np.bincount(labels, minlength=class_count or 0)
    return ClassFrequencies(counts / labels.size)


def evaluate_discrepancies(model, features, chunk_size=4096):
    """D between the two heads for every row"""
    features = as_dense(features, cols=model.input_dim)
    out = np.empty(features.shape[0])
    for start in range(0, features.shape[0], chunk_size):
        result = forward(model, features[start:start + chunk_size])
        out[start:start + chunk_size] = discrepancy(result.probs1, result.probs2)
    return out


def head_discrepancy_spec(labels, frequencies, lambda_min, supervised=False):
    """
    L_min = -lambda_min * mean D* on a batch, routed to the heads only, optionally
    with cross-entropy on the batch's noisy labels
    """
    rows = np.arange(len(labels))
    terms = [LossTerm(
        name="L_min",
        kind=DISCREPANCY,
        rows=rows,
        coef=-lambda_min,
        weights=frequencies.of(labels),
        routes={HEADS},
    )]
    if supervised:
        terms.append(LossTerm(
            name="CE",
            kind=CROSS_ENTROPY,
            rows=rows,
            targets=one_hot(labels, frequencies.weights.size),
            routes={HEADS},
        ))
    return LossSpec(terms, trainable={HEADS})


def _head_outputs(model, extracted):
    """Softmax outputs of both heads on precomputed features"""
    probs1 = softmax_rows(extracted @ model.head1.weight + model.head1.bias)
    probs2 = softmax_rows(extracted @ model.head2.weight + model.head2.bias)
    return probs1, probs2


def _label_agreement(probs1, probs2, labels):
    """Share of samples whose label is each head's argmax, as (head 1, head 2)"""
    return (float(np.mean(np.argmax(probs1, axis=1) == labels)),
            float(np.mean(np.argmax(probs2, axis=1) == labels)))


def maximize_head_discrepancy(model, optim, dataset, clean_index, frequencies,
                              lambda_min=1.0, n_max=50, batch_size=64, rng=None,
                              supervised=False, learning_rate=None, max_agreement_drop=0.1):
    """
    Step 3 training: push the heads apart on S1_clean with the extractor frozen

    Steps use their own momentum buffers, started from zero, with the shared
    optimizer's momentum and weight decay; the buffers of `optim` are not touched.
    A step is undone, and the step size halved, when it lowers the batch's mean D*
    or drops either head's agreement with the noisy labels on S1_clean by more than
    `max_agreement_drop` below its value before Step 3. If the mean D* over S1_clean
    still ends below its starting value the heads are restored.

    Args:
        model: ModelParams, heads updated in place
        optim: Shared OptimState; supplies learning rate, momentum and weight decay
        dataset: LabeledDataset
        clean_index: Positions of S1_clean in the dataset
        frequencies: ClassFrequencies over the full noisy dataset
        lambda_min: Strength of the maximization; 0 makes this a no-op
        n_max: Number of head iterations
        batch_size: Mini-batch size drawn from S1_clean
        rng: Generator for mini-batch sampling
        supervised: Also apply cross-entropy on S1_clean
        learning_rate: Step size for these iterations; None uses optim.learning_rate
        max_agreement_drop: Largest allowed fall of a head's label agreement

    Returns:
        Tuple of (model, ConsistencyReport)
    """
    clean_index = np.asarray(clean_index, dtype=np.int64)
    report = ConsistencyReport(ids=dataset.ids[clean_index], n_max=n_max, lambda_min=lambda_min)
    if clean_index.size == 0:
        report.skipped = "empty S1_clean"
        logger.warning("S1_clean is empty; skipping stage 2 this epoch")
        return model, report

    features = dataset.features[clean_index]
    labels = dataset.noisy_labels[clean_index]
    sample_weights = frequencies.of(labels)
    # the extractor is frozen, so its output is computed once
    extracted = forward(model, features).features
    probs1, probs2 = _head_outputs(model, extracted)
    report.mean_weighted_before = float(np.mean(sample_weights * discrepancy(probs1, probs2)))
    report.agreement_before = _label_agreement(probs1, probs2, labels)

    if lambda_min == 0.0 or n_max == 0:
        report.skipped = "no-op"
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        step_lr = optim.learning_rate if learning_rate is None else learning_rate
        step_optim = OptimState.for_model(model, step_lr, optim.momentum, optim.weight_decay)
        initial_heads = (model.head1.copy(), model.head2.copy())
        losses = []
        take = min(batch_size, clean_index.size)
        for _ in range(n_max):
            idx = rng.choice(clean_index.size, size=take, replace=False)
            heads = (model.head1.copy(), model.head2.copy())
            spec = head_discrepancy_spec(labels[idx], frequencies, lambda_min, supervised)
            _, evaluation = backward_step(model, step_optim, features[idx], spec)
            batch_before = -evaluation.components["L_min"] / lambda_min

            probs1, probs2 = _head_outputs(model, extracted)
            batch_after = float(np.mean(sample_weights[idx] * discrepancy(probs1[idx], probs2[idx])))
            # Check the step against the batch objective and the label agreement of both heads
            agreement = _label_agreement(probs1, probs2, labels)
            if batch_after < batch_before or any(
                    now < start - max_agreement_drop for now, start in zip(agreement, report.agreement_before)):
                model.head1, model.head2 = heads
                step_optim = OptimState.for_model(model, step_optim.learning_rate / 2.0,
                                                  optim.momentum, optim.weight_decay)
                report.rejected_steps += 1
                continue
            losses.append(evaluation.components["L_min"])
        report.loss_min = float(np.mean(losses)) if losses else 0.0
        report.final_learning_rate = step_optim.learning_rate

        probs1, probs2 = _head_outputs(model, extracted)
        if np.mean(sample_weights * discrepancy(probs1, probs2)) < report.mean_weighted_before:
            logger.warning("mean D* fell during head maximization; restoring the heads")
            model.head1, model.head2 = initial_heads
            report.restored = True

    probs1, probs2 = _head_outputs(model, extracted)
    report.discrepancy = discrepancy(probs1, probs2)
    report.weighted = sample_weights * report.discrepancy
    report.mean_weighted_after = float(np.mean(report.weighted))
    report.agreement_after = _label_agreement(probs1, probs2, labels)
    logger.debug("head maximization: D* %.4f -> %.4f, agreement %s -> %s, %d/%d steps rejected",
                 report.mean_weighted_before, report.mean_weighted_after, report.agreement_before,
                 report.agreement_after, report.rejected_steps, n_max)
    return model, report


def _fallback(stage1, all_discrepancy, reason):
    """S2 = S1, keeping the discrepancies for the report"""
    logger.warning("stage 2 fallback (S2 = S1): %s", reason)
    partition = stage1.relabeled(STAGE2, fallback=reason)
    partition.scores = all_discrepancy
    partition.normalized_scores = None
    partition.fits = {}
    return partition


def stage2_partition(model, dataset, stage1, theta=0.5, frequencies=None, score=RAW_SCORE,
                     per_class=False, max_iter=100, tol=1e-6):
    """
    Split S1_clean by a GMM over (min-max normalized) discrepancies

    The component with the smaller mean is clean; S1_clean members whose clean
    posterior exceeds theta form S2_clean, everything else is S2_noisy.

    Args:
        model: ModelParams with heads in their post-maximization state
        dataset: LabeledDataset
        stage1: Stage-1 Partition
        theta: Clean-posterior threshold
        frequencies: ClassFrequencies, required for the weighted score
        score: RAW_SCORE (D) or WEIGHTED_SCORE (D*)
        per_class: Fit one GMM per noisy class instead of one global GMM

    Returns:
        Partition with stage "S2"; `scores` is D for every sample and
        `posterior_clean` is the stage-1 posterior times the stage-2 posterior
        for S1_clean members
    """
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"must be in (0, 1), got {theta}", field="train.theta")
    if score not in (RAW_SCORE, WEIGHTED_SCORE):
        raise ConfigError(f"unknown stage-2 score {score!r}", field="train.stage2_score")
    all_discrepancy = evaluate_discrepancies(model, dataset.features)
    clean_index = stage1.clean_index
    if clean_index.size == 0:
        return _fallback(stage1, all_discrepancy, "empty S1_clean")

    values = all_discrepancy[clean_index]
    if score == WEIGHTED_SCORE:
        if frequencies is None:
            raise ConfigError("weighted score needs class frequencies", field="train.stage2_score")
        values = values * frequencies.of(dataset.noisy_labels[clean_index])

    posterior2 = np.ones(clean_index.size)
    normalized = np.zeros(clean_index.size)
    fits = {}
    if per_class:
        labels = dataset.noisy_labels[clean_index]
        for c in np.unique(labels):
            local = np.flatnonzero(labels == c)
            normalized[local] = min_max_normalize(values[local])
            try:
                fit = fit_gmm1d(normalized[local], max_iter=max_iter, tol=tol)
            except (DegenerateDataError, InsufficientDataError) as e:
                logger.debug("stage-2 class %d kept as clean: %s", c, e)
                continue
            posterior2[local] = clean_posterior(fit, normalized[local], SMALLER_MEAN)
            fits[f"class_{int(c)}"] = fit.to_dict()
    else:
        normalized = min_max_normalize(values)
        try:
            fit = fit_gmm1d(normalized, max_iter=max_iter, tol=tol)
        except (DegenerateDataError, InsufficientDataError) as e:
            return _fallback(stage1, all_discrepancy, str(e))
        posterior2 = clean_posterior(fit, normalized, SMALLER_MEAN)
        fits["global"] = fit.to_dict()

    is_clean = np.zeros(len(stage1), dtype=bool)
    is_clean[clean_index] = posterior2 > theta
    composite = stage1.posterior_clean.copy()
    composite[clean_index] *= posterior2
    full_normalized = np.full(len(stage1), np.nan)
    full_normalized[clean_index] = normalized
    return Partition(
        stage=STAGE2,
        ids=stage1.ids,
        is_clean=is_clean,
        scores=all_discrepancy,
        posterior_clean=composite,
        class_grouping=dict(stage1.class_grouping),
        normalized_scores=full_normalized,
        fits=fits,
    )


class ConsistencyClassifier:
    """Stage-2 selector bound to its hyper-parameters"""

    def __init__(self, theta=0.5, lambda_min=1.0, n_max=50, batch_size=64,
                 score=RAW_SCORE, per_class=False, supervised=False, learning_rate=None,
                 max_agreement_drop=0.1):
        """
        Args:
            learning_rate: Head-maximization step size; None follows the shared optimizer
            max_agreement_drop: Largest allowed fall of a head's label agreement in Step 3
        """
        self.theta = theta
        self.lambda_min = lambda_min
        self.n_max = n_max
        self.batch_size = batch_size
        self.score = score
        self.per_class = per_class
        self.supervised = supervised
        self.learning_rate = learning_rate
        self.max_agreement_drop = max_agreement_drop

    def run(self, model, optim, dataset, stage1, frequencies, rng):
        """
        Head maximization followed by the stage-2 split

        Returns:
            Tuple of (Partition S2, ConsistencyReport)
        """
        _, report = maximize_head_discrepancy(
            model, optim, dataset, stage1.clean_index, frequencies,
            self.lambda_min, self.n_max, self.batch_size, rng, self.supervised,
            self.learning_rate, self.max_agreement_drop,
        )
        partition = stage2_partition(model, dataset, stage1, self.theta, frequencies,
                                     self.score, self.per_class)
        return partition, report
