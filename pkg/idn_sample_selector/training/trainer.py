"""
Module for the training loop: warm-up followed by the four-step epoch

Each epoch runs four steps:

1. similarities of normalized features to their class centers
2. per-class mixtures on the similarities split the set into S1 clean/noisy
3. the heads are pushed apart on S1_clean (extractor frozen) and their
   consistency splits S1_clean further into S2 clean/noisy
4. MixMatch-style training on S2, plus a discrepancy penalty that reaches
   only the feature extractor
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from idn_sample_selector.analysis.metrics import (
    auc_or_none,
    class_distribution,
    score_histograms,
    selection_precision,
    selection_recall,
)
from idn_sample_selector.analysis.stage1 import STAGE1, STAGE2, FeatureClusterer, Partition
from idn_sample_selector.analysis.stage2 import ConsistencyClassifier, ConsistencyReport, class_frequencies
from idn_sample_selector.model.losses import CROSS_ENTROPY, DISCREPANCY, SQUARED_ERROR, LossSpec, LossTerm
from idn_sample_selector.model.network import EXTRACTOR, forward, init_model
from idn_sample_selector.model.optimizer import OptimState, backward_step
from idn_sample_selector.noise.datasets import make_blobs
from idn_sample_selector.noise.injectors import apply_noise
from idn_sample_selector.training.mixmatch import mixmatch_lite
from idn_sample_selector.training.supervised import accuracy, run_cross_entropy_epoch
from idn_sample_selector.utils.config import config_to_dict
from idn_sample_selector.utils.errors import (
    DegenerateCenterError,
    DegenerateDataError,
    DegenerateFeatureError,
    InsufficientDataError,
    NumericalError,
)
from idn_sample_selector.utils.seeding import SeedStreams

logger = logging.getLogger(__name__)

STAGE1_ERRORS = (DegenerateDataError, DegenerateCenterError, DegenerateFeatureError, InsufficientDataError)


def to_plain(value):
    """Convert numpy scalars/arrays and NaN into JSON-friendly Python values"""
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


@dataclass
class EpochRecord:
    """Everything measured during one post-warm-up epoch"""

    epoch: int
    learning_rate: float
    lambda_u: float
    test_accuracy: float
    test_accuracy_head1: float
    test_accuracy_head2: float
    auc_s1: Optional[float]
    auc_s2: Optional[float]
    n_s1: int
    n_s2: int
    precision_s1: float
    precision_s2: float
    recall_s1: float
    recall_s2: float
    class_distribution_s1: Optional[List[float]]
    class_distribution_s2: Optional[List[float]]
    histograms_s1: Optional[dict]
    histograms_s2: Optional[dict]
    losses: Dict[str, float]
    fits_s1: Dict[str, dict] = field(default_factory=dict)
    fits_s2: Dict[str, dict] = field(default_factory=dict)
    fallback_s1: Optional[str] = None
    fallback_s2: Optional[str] = None
    consistency: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return to_plain(self.__dict__)

    def summary_row(self):
        """Flat row for the per-epoch CSV"""
        return {
            "epoch": self.epoch,
            "acc": self.test_accuracy,
            "auc_s1": self.auc_s1,
            "auc_s2": self.auc_s2,
            "n_s1": self.n_s1,
            "n_s2": self.n_s2,
            "Lx": self.losses["L_X"],
            "Lu": self.losses["L_U"],
            "Lmin": self.losses["L_min"],
            "Lmax": self.losses["L_max"],
        }


@dataclass
class RunReport:
    """Outcome of run_training; the final model is kept for checkpointing only"""

    config: dict
    n_train: int
    n_test: int
    noise_rate: float
    warmup: Dict[str, object]
    epochs: List[EpochRecord] = field(default_factory=list)
    model: object = field(default=None, repr=False)
    optim: object = field(default=None, repr=False)

    @property
    def final_accuracy(self):
        if self.epochs:
            return self.epochs[-1].test_accuracy
        return self.warmup["test_accuracy"]

    def to_dict(self):
        return {
            "config": self.config,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "noise_rate": to_plain(self.noise_rate),
            "warmup": to_plain(self.warmup),
            "epochs": [record.to_dict() for record in self.epochs],
        }


def linear_rampup(progress, rampup_length):
    """Linear ramp from 0 to 1 over `rampup_length` epochs; length 0 disables it"""
    if rampup_length == 0:
        return 1.0
    return float(np.clip(progress / rampup_length, 0.0, 1.0))


def learning_rate_at(config, epoch):
    if epoch >= config.lr_decay_epoch:
        return config.learning_rate * config.lr_decay_factor
    return config.learning_rate


def build_datasets(config):
    """
    Generate the noisy training set and the clean, balanced test set for a config

    Returns:
        Tuple of (train LabeledDataset, test LabeledDataset)
    """
    streams = SeedStreams(config.seed)
    spec = config.data
    data_seed = streams.child_seed("data")
    train = make_blobs(spec.n_per_class, spec.class_count, spec.dim, spec.center_spread,
                       spec.cluster_std, spec.imbalance_ratios or None, seed=data_seed, split="train")
    test = make_blobs(spec.n_test_per_class, spec.class_count, spec.dim, spec.center_spread,
                      spec.cluster_std, None, seed=data_seed, split="test")
    train = apply_noise(train, config.noise, seed=streams.child_seed("noise"))
    logger.info("generated %d training samples (noise %s, realized rate %.4f) and %d test samples",
                len(train), config.noise.kind, train.noise_rate, len(test))
    return train, test


def warmup(model, optim, dataset, warmup_epochs, batch_size, rng, schedule=None):
    """
    Cross-entropy on all noisy labels, both heads summed

    Args:
        model: Fresh ModelParams, updated in place
        optim: OptimState
        dataset: LabeledDataset
        warmup_epochs: Number of epochs; 0 leaves the model untouched
        batch_size: Mini-batch size
        rng: Shuffle generator
        schedule: Optional callable epoch -> learning rate

    Returns:
        Tuple of (model, list of per-epoch mean losses)

    Raises:
        NumericalError: if the loss diverges
    """
    losses = []
    for epoch in range(warmup_epochs):
        if schedule is not None:
            optim.learning_rate = schedule(epoch)
        try:
            loss = run_cross_entropy_epoch(model, optim, dataset.features, dataset.noisy_labels,
                                           batch_size, rng)
        except NumericalError as e:
            raise NumericalError(
                f"warm-up diverged in epoch {epoch} at learning rate {optim.learning_rate}; "
                f"lower train.learning_rate ({e})",
                term=e.term,
            ) from e
        logger.info("warm-up epoch %d: CE %.4f", epoch, loss)
        losses.append(loss)
    return model, losses


def build_semi_supervised_spec(mixed, raw_inputs, raw_labels, frequencies, lambda_u, lambda_max):
    """
    Assemble the step-4 batch and objective

    Rows are laid out as [mixed labeled; mixed unlabeled; raw samples]. L_X and the
    scaled L_U reach every parameter; L_max = lambda_max * mean D* on the raw samples
    reaches only the extractor, so minimizing it pulls the heads' outputs together
    through the features.

    Returns:
        Tuple of (batch matrix, LossSpec)
    """
    n_x = mixed.inputs_x.shape[0]
    n_u = mixed.inputs_u.shape[0]
    n_raw = raw_inputs.shape[0]
    batch = np.vstack([mixed.inputs_x, mixed.inputs_u, raw_inputs])
    terms = [
        LossTerm(name="L_X", kind=CROSS_ENTROPY, rows=np.arange(n_x), targets=mixed.targets_x),
        LossTerm(name="L_U", kind=SQUARED_ERROR, rows=np.arange(n_x, n_x + n_u),
                 coef=lambda_u, targets=mixed.targets_u),
        LossTerm(name="L_max", kind=DISCREPANCY, rows=np.arange(n_x + n_u, n_x + n_u + n_raw),
                 coef=lambda_max, weights=frequencies.of(raw_labels), routes={EXTRACTOR}),
    ]
    return batch, LossSpec(terms)


def semi_supervised_step(model, optim, x_clean, y_clean, x_noisy, y_noisy, frequencies, config,
                         lambda_u, lambda_max, rng):
    """
    One step-4 update on a clean batch and a (possibly empty) noisy batch

    Args:
        model: ModelParams, updated in place
        optim: OptimState
        x_clean, y_clean: Labeled batch and its noisy labels
        x_noisy, y_noisy: Unlabeled batch; its labels only weight L_max
        frequencies: ClassFrequencies over the training set
        config: TrainConfig supplying the MixMatch constants
        lambda_u: Current (ramped) weight of L_U
        lambda_max: Weight of L_max
        rng: Generator for jitter and mixup

    Returns:
        Tuple of (model, dict of loss components)
    """
    mixed = mixmatch_lite(x_clean, y_clean, x_noisy, model, config.temperature, config.mixup_alpha,
                          config.n_augment, config.jitter_std, rng)
    raw_inputs = np.vstack([x_clean, x_noisy])
    raw_labels = np.concatenate([y_clean, y_noisy])
    batch, spec = build_semi_supervised_spec(mixed, raw_inputs, raw_labels, frequencies,
                                             lambda_u, lambda_max)
    _, evaluation = backward_step(model, optim, batch, spec)
    return model, evaluation.components


def semi_supervised_epoch(model, optim, dataset, partition, frequencies, config, epoch,
                          lambda_max, shuffle_rng, mix_rng):
    """
    Step 4 over all clean batches of the partition

    Returns:
        Tuple of (mean loss components, lambda_u at the last step)
    """
    clean = partition.clean_index
    noisy = partition.noisy_index
    totals = {"L_X": 0.0, "L_U": 0.0, "L_max": 0.0}
    lambda_u = config.lambda_u * linear_rampup(epoch - config.warmup_epochs, config.lambda_u_rampup)
    if clean.size == 0:
        logger.warning("epoch %d: clean set is empty; skipping semi-supervised training", epoch)
        return totals, lambda_u

    order = shuffle_rng.permutation(clean)
    n_iter = math.ceil(order.size / config.batch_size)
    for i in range(n_iter):
        idx = order[i * config.batch_size:(i + 1) * config.batch_size]
        if noisy.size:
            nidx = shuffle_rng.choice(noisy, size=min(config.batch_size, noisy.size), replace=False)
        else:
            nidx = noisy
        progress = epoch - config.warmup_epochs + i / n_iter
        lambda_u = config.lambda_u * linear_rampup(progress, config.lambda_u_rampup)
        _, components = semi_supervised_step(
            model, optim,
            dataset.features[idx], dataset.noisy_labels[idx],
            dataset.features[nidx], dataset.noisy_labels[nidx],
            frequencies, config, lambda_u, lambda_max, mix_rng,
        )
        for name in totals:
            totals[name] += components.get(name, 0.0)
        logger.debug("epoch %d batch %d: %s", epoch, i, components)
    return {name: value / n_iter for name, value in totals.items()}, lambda_u


def _head_accuracies(model, test_set):
    """Test accuracy of the averaged heads, then of head 1 and head 2 alone"""
    result = forward(model, test_set.features)
    labels = test_set.true_labels
    return (
        float(np.mean(np.argmax(result.mean_probs, axis=1) == labels)),
        float(np.mean(np.argmax(result.probs1, axis=1) == labels)),
        float(np.mean(np.argmax(result.probs2, axis=1) == labels)),
    )


def _distribution_or_none(partition, dataset):
    # Check for an empty clean set, which has no distribution
    try:
        return class_distribution(partition, dataset.noisy_labels, dataset.class_count).tolist()
    except InsufficientDataError:
        return None


def _histograms_or_none(partition, truth):
    if partition.normalized_scores is None:
        return None
    return score_histograms(partition.normalized_scores, truth)


class Trainer:
    """
    Runs warm-up and the epoch loop for one config

    An optional `epoch_callback(epoch, stage1, stage2, consistency_report)` receives the
    partitions of every epoch, e.g. to dump them to disk.
    """

    def __init__(self, config, epoch_callback=None):
        self.config = config.validate()
        self.streams = SeedStreams(config.seed)
        self.epoch_callback = epoch_callback
        self.clusterer = FeatureClusterer(config.theta, config.theta_agg, config.center_source)
        self.consistency = ConsistencyClassifier(
            theta=config.theta,
            lambda_min=config.lambda_min,
            n_max=config.n_max,
            batch_size=config.batch_size,
            score=config.stage2_score,
            per_class=config.stage2_per_class,
            supervised=config.stage2_supervised,
            learning_rate=config.stage2_learning_rate or None,
            max_agreement_drop=config.stage2_agreement_drop,
        )

    def run(self, dataset=None, test_set=None):
        """
        Args:
            dataset: Optional noisy training set; generated from the config when None
            test_set: Optional test set; generated from the config when None

        Returns:
            RunReport
        """
        config = self.config
        if dataset is None or test_set is None:
            generated_train, generated_test = build_datasets(config)
            dataset = generated_train if dataset is None else dataset
            test_set = generated_test if test_set is None else test_set

        model = init_model(dataset.dim, dataset.class_count,
                           self.streams.generator("model-init"), self.streams.generator("head2-init"),
                           hidden_sizes=tuple(config.hidden_sizes), feature_dim=config.feature_dim)
        optim = OptimState.for_model(model, config.learning_rate, config.momentum, config.weight_decay)
        shuffle_rng = self.streams.generator("shuffle")
        stage2_rng = self.streams.generator("stage2")
        mix_rng = self.streams.generator("mixmatch")

        _, warmup_losses = warmup(model, optim, dataset, config.warmup_epochs, config.batch_size,
                                  shuffle_rng, schedule=lambda e: learning_rate_at(config, e))
        report = RunReport(
            config=config_to_dict(config),
            n_train=len(dataset),
            n_test=len(test_set),
            noise_rate=dataset.noise_rate,
            warmup={
                "epochs": config.warmup_epochs,
                "losses": warmup_losses,
                "train_accuracy": accuracy(model, dataset.features, dataset.noisy_labels),
                "test_accuracy": accuracy(model, test_set.features, test_set.true_labels),
            },
        )
        logger.info("warm-up done: train accuracy %.4f, test accuracy %.4f",
                    report.warmup["train_accuracy"], report.warmup["test_accuracy"])

        frequencies = class_frequencies(dataset.noisy_labels, dataset.class_count)
        previous_s1 = None
        for epoch in range(config.warmup_epochs, config.epochs):
            optim.learning_rate = learning_rate_at(config, epoch)
            record, previous_s1 = self._run_epoch(epoch, model, optim, dataset, test_set, frequencies,
                                                  previous_s1, shuffle_rng, stage2_rng, mix_rng)
            report.epochs.append(record)

        report.model = model
        report.optim = optim
        return report

    def _stage1(self, epoch, model, dataset, previous):
        if not self.config.use_stage1:
            return Partition.everything_clean(dataset.ids, STAGE1)
        try:
            return self.clusterer.partition(model, dataset)
        except STAGE1_ERRORS as e:
            if previous is not None:
                logger.warning("epoch %d: stage 1 aborted (%s); reusing the previous partition", epoch, e)
                return previous.relabeled(STAGE1, fallback=f"previous partition: {e}")
            logger.warning("epoch %d: stage 1 aborted (%s); treating every sample as clean", epoch, e)
            partition = Partition.everything_clean(dataset.ids, STAGE1)
            partition.fallback = f"all clean: {e}"
            return partition

    def _run_epoch(self, epoch, model, optim, dataset, test_set, frequencies, previous_s1,
                   shuffle_rng, stage2_rng, mix_rng):
        config = self.config
        baseline = not config.use_stage1 and not config.use_stage2
        s1 = self._stage1(epoch, model, dataset, previous_s1)

        if config.use_stage2:
            s2, consistency = self.consistency.run(model, optim, dataset, s1, frequencies, stage2_rng)
            lambda_max = config.lambda_max
        else:
            s2 = s1.relabeled(STAGE2)
            consistency = ConsistencyReport(skipped="stage 2 disabled")
            lambda_max = 0.0

        if baseline:
            ce = run_cross_entropy_epoch(model, optim, dataset.features, dataset.noisy_labels,
                                         config.batch_size, shuffle_rng)
            step_losses, lambda_u = {"L_X": ce, "L_U": 0.0, "L_max": 0.0}, 0.0
        else:
            step_losses, lambda_u = semi_supervised_epoch(
                model, optim, dataset, s2, frequencies, config, epoch, lambda_max, shuffle_rng, mix_rng,
            )

        truth = dataset.is_clean
        acc, acc1, acc2 = _head_accuracies(model, test_set)
        record = EpochRecord(
            epoch=epoch,
            learning_rate=optim.learning_rate,
            lambda_u=lambda_u,
            test_accuracy=acc,
            test_accuracy_head1=acc1,
            test_accuracy_head2=acc2,
            auc_s1=auc_or_none(s1.posterior_clean, truth),
            auc_s2=auc_or_none(s2.posterior_clean, truth),
            n_s1=s1.n_clean,
            n_s2=s2.n_clean,
            precision_s1=selection_precision(s1.is_clean, truth),
            precision_s2=selection_precision(s2.is_clean, truth),
            recall_s1=selection_recall(s1.is_clean, truth),
            recall_s2=selection_recall(s2.is_clean, truth),
            class_distribution_s1=_distribution_or_none(s1, dataset),
            class_distribution_s2=_distribution_or_none(s2, dataset),
            histograms_s1=_histograms_or_none(s1, truth),
            histograms_s2=_histograms_or_none(s2, truth),
            losses={
                "L_X": step_losses["L_X"],
                "L_U": step_losses["L_U"],
                "L_min": consistency.loss_min,
                "L_max": step_losses["L_max"],
            },
            fits_s1=s1.fits,
            fits_s2=s2.fits,
            fallback_s1=s1.fallback,
            fallback_s2=s2.fallback,
            consistency={
                "n_max": consistency.n_max,
                "lambda_min": consistency.lambda_min,
                "mean_weighted_before": consistency.mean_weighted_before,
                "mean_weighted_after": consistency.mean_weighted_after,
                "agreement_before": list(consistency.agreement_before),
                "agreement_after": list(consistency.agreement_after),
                "rejected_steps": consistency.rejected_steps,
                "restored": consistency.restored,
                "skipped": consistency.skipped,
            },
        )
        logger.info(
            "epoch %d: acc %.4f | auc S1 %s S2 %s | |S1| %d |S2| %d | L_X %.4f L_U %.4f L_min %.4f L_max %.4f",
            epoch, acc, _fmt(record.auc_s1), _fmt(record.auc_s2), record.n_s1, record.n_s2,
            record.losses["L_X"], record.losses["L_U"], record.losses["L_min"], record.losses["L_max"],
        )
        if self.epoch_callback is not None:
            self.epoch_callback(epoch, s1, s2, consistency)
        return record, s1


def _fmt(value):
    """Format an optional metric for the epoch log line"""
    return "n/a" if value is None else f"{value:.4f}"


def run_training(config, dataset=None, test_set=None, epoch_callback=None):
    """
    Warm-up, then the four-step loop for every remaining epoch

    Args:
        config: TrainConfig
        dataset: Optional noisy training set (generated from the config otherwise)
        test_set: Optional test set (generated from the config otherwise)
        epoch_callback: Optional callable receiving each epoch's partitions

    Returns:
        RunReport
    """
    return Trainer(config, epoch_callback).run(dataset, test_set)
