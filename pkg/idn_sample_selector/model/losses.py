"""
Module for loss terms and their routed analytic gradients

Every objective used in training is a sum of LossTerm objects evaluated on rows of
one input batch. A term's `routes` decide which parameter groups its gradient may
reach: head-only terms stop at the heads, extractor-only terms pass through the
heads into the extractor without updating them.
"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from idn_sample_selector.model.network import EXTRACTOR, HEADS, PARAMETER_GROUPS, forward
from idn_sample_selector.utils.errors import DimensionError, NumericalError

CROSS_ENTROPY = "cross_entropy"
SQUARED_ERROR = "squared_error"
DISCREPANCY = "discrepancy"
LOSS_KINDS = (CROSS_ENTROPY, SQUARED_ERROR, DISCREPANCY)

ALL_GROUPS = frozenset(PARAMETER_GROUPS)


@dataclass
class LossTerm:
    """
    One additive piece of an objective

    Attributes:
        name: Reported component name ("L_X", "L_U", "L_min", "L_max", "CE")
        kind: One of LOSS_KINDS
        rows: Indices into the batch this term reads
        coef: Multiplier applied to the term (negative for L_min)
        targets: Soft targets, shape (len(rows), C); required for CE and squared error
        weights: Per-row weights; discrepancy only (class frequencies for D*)
        routes: Parameter groups the gradient of this term may update
        heads: Heads a CE / squared-error term is applied to, summed
    """

    name: str
    kind: str
    rows: np.ndarray
    coef: float = 1.0
    targets: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    routes: FrozenSet[str] = ALL_GROUPS
    heads: Tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind: {self.kind}")
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.routes = frozenset(self.routes)
        if self.kind in (CROSS_ENTROPY, SQUARED_ERROR):
            if self.targets is None:
                raise DimensionError(f"{self.name}: targets required for {self.kind}")
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape[0] != self.rows.size:
                raise DimensionError(
                    f"{self.name}: {self.targets.shape[0]} targets for {self.rows.size} rows"
                )
        if self.kind == DISCREPANCY:
            if self.weights is None:
                self.weights = np.ones(self.rows.size)
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if self.weights.shape != (self.rows.size,):
                raise DimensionError(f"{self.name}: one weight per row required")


@dataclass
class LossSpec:
    """A list of loss terms plus the parameter groups a step may update"""

    terms: List[LossTerm]
    trainable: FrozenSet[str] = ALL_GROUPS

    def __post_init__(self):
        self.trainable = frozenset(self.trainable)
        unknown = self.trainable - ALL_GROUPS
        if unknown:
            raise ValueError(f"unknown parameter group(s): {sorted(unknown)}")


@dataclass
class LossEvaluation:
    total: float
    components: Dict[str, float] = field(default_factory=dict)


def _softmax_vjp(probs, grad_probs):
    # dL/dz for p = softmax(z), given dL/dp
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=1, keepdims=True))


def _term_value_and_logit_grads(term, result):
    """
    Value of one term and its gradients w.r.t. both heads' logits (full batch shape)
    """
    n_batch, n_classes = result.logits1.shape
    grad1 = np.zeros((n_batch, n_classes))
    grad2 = np.zeros((n_batch, n_classes))
    rows = term.rows
    n = max(rows.size, 1)
    value = 0.0
    if rows.size == 0:
        return value, grad1, grad2

    if term.kind == DISCREPANCY:
        p1 = result.probs1[rows]
        p2 = result.probs2[rows]
        diff = p1 - p2
        value = term.coef * float(np.mean(term.weights * np.sum(np.abs(diff), axis=1)))
        g = term.coef * np.sign(diff) * (term.weights / n)[:, None]
        np.add.at(grad1, rows, _softmax_vjp(p1, g))
        np.add.at(grad2, rows, _softmax_vjp(p2, -g))
        return value, grad1, grad2

    for head, logits, probs, grad in ((1, result.logits1, result.probs1, grad1),
                                      (2, result.logits2, result.probs2, grad2)):
        if head not in term.heads:
            continue
        z = logits[rows]
        p = probs[rows]
        t = term.targets
        if t.shape[1] != n_classes:
            raise DimensionError(f"{term.name}: targets have {t.shape[1]} classes, model {n_classes}")
        if term.kind == CROSS_ENTROPY:
            log_p = z - logsumexp(z, axis=1, keepdims=True)
            value += term.coef * float(-np.mean(np.sum(t * log_p, axis=1)))
            dz = term.coef * (p * np.sum(t, axis=1, keepdims=True) - t) / n
        else:
            value += term.coef * float(np.mean((p - t) ** 2))
            g = term.coef * 2.0 * (p - t) / (n * n_classes)
            dz = _softmax_vjp(p, g)
        np.add.at(grad, rows, dz)
    return value, grad1, grad2


def compute_loss(model, batch, spec, group=None, result=None):
    """
    Evaluate an objective without gradients

    Args:
        model: ModelParams
        batch: Input matrix the terms index into
        spec: LossSpec
        group: If given, only terms routed to this parameter group count; this is the
            objective whose gradient that group actually receives
        result: Optional precomputed ForwardResult

    Returns:
        LossEvaluation
    """
    if result is None:
        result = forward(model, batch)
    evaluation = LossEvaluation(total=0.0)
    for term in spec.terms:
        if group is not None and group not in term.routes:
            continue
        value, _, _ = _term_value_and_logit_grads(term, result)
        evaluation.components[term.name] = evaluation.components.get(term.name, 0.0) + value
        evaluation.total += value
    return evaluation


def loss_and_gradients(model, batch, spec):
    """
    Evaluate an objective and its routed gradients

    Args:
        model: ModelParams
        batch: Input matrix the terms index into
        spec: LossSpec

    Returns:
        Tuple of (LossEvaluation, dict of parameter name -> gradient array). Groups a
        term is not routed to receive nothing from it.

    Raises:
        NumericalError: naming the term whose value or gradient is non-finite
    """
    result = forward(model, batch)
    n_batch, n_classes = result.logits1.shape
    head_dz1 = np.zeros((n_batch, n_classes))
    head_dz2 = np.zeros((n_batch, n_classes))
    ext_dz1 = np.zeros((n_batch, n_classes))
    ext_dz2 = np.zeros((n_batch, n_classes))
    evaluation = LossEvaluation(total=0.0)

    for term in spec.terms:
        value, dz1, dz2 = _term_value_and_logit_grads(term, result)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss value {value}", term=term.name)
        if not (np.all(np.isfinite(dz1)) and np.all(np.isfinite(dz2))):
            raise NumericalError("non-finite gradient", term=term.name)
        evaluation.components[term.name] = evaluation.components.get(term.name, 0.0) + value
        evaluation.total += value
        if HEADS in term.routes:
            head_dz1 += dz1
            head_dz2 += dz2
        if EXTRACTOR in term.routes:
            ext_dz1 += dz1
            ext_dz2 += dz2

    grads = {}
    features = result.features
    for name, layer, dz in (("head1", model.head1, head_dz1), ("head2", model.head2, head_dz2)):
        grads[f"{name}.weight"] = features.T @ dz
        grads[f"{name}.bias"] = np.sum(dz, axis=0)

    delta = ext_dz1 @ model.head1.weight.T + ext_dz2 @ model.head2.weight.T
    last = len(model.extractor) - 1
    for i in range(last, -1, -1):
        if i < last:
            delta = delta * (result.pre_activations[i] > 0.0)
        layer = model.extractor[i]
        grads[f"extractor.{i}.weight"] = result.activations[i].T @ delta
        grads[f"extractor.{i}.bias"] = np.sum(delta, axis=0)
        if i > 0:
            delta = delta @ layer.weight.T

    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for {name}", term="total")
    return evaluation, grads
