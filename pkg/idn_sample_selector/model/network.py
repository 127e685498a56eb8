"""
Module for the dense feature extractor and the two classifier heads
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from idn_sample_selector.utils.errors import (
    DegenerateFeatureError,
    DimensionError,
    NumericalError,
)

EXTRACTOR = "extractor"
HEADS = "heads"
PARAMETER_GROUPS = (EXTRACTOR, HEADS)


@dataclass
class DenseLayer:
    """Affine map x @ weight + bias; weight has shape (in, out)"""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def shape(self):
        return self.weight.shape

    def copy(self):
        return DenseLayer(self.weight.copy(), self.bias.copy())


@dataclass
class ModelParams:
    """
    Feature extractor F (ReLU between layers, linear output) and two linear heads
    G1, G2 producing `class_count` logits each.
    """

    extractor: List[DenseLayer]
    head1: DenseLayer
    head2: DenseLayer

    def __post_init__(self):
        if self.head1.shape != self.head2.shape:
            raise DimensionError(
                f"head shapes differ: {self.head1.shape} vs {self.head2.shape}"
            )
        if self.head1.shape[0] != self.feature_dim:
            raise DimensionError(
                f"head input {self.head1.shape[0]} != feature_dim {self.feature_dim}"
            )
        if self.class_count < 2:
            raise DimensionError("class_count must be at least 2")

    @property
    def input_dim(self):
        return self.extractor[0].weight.shape[0]

    @property
    def feature_dim(self):
        return self.extractor[-1].weight.shape[1]

    @property
    def class_count(self):
        return self.head1.weight.shape[1]

    def layers(self, group):
        if group == EXTRACTOR:
            return list(self.extractor)
        if group == HEADS:
            return [self.head1, self.head2]
        raise ValueError(f"unknown parameter group: {group}")

    def named_parameters(self):
        """
        Flat, stably ordered view of every parameter array

        Returns:
            List of (name, array, group, is_weight) tuples; arrays are live views
        """
        params = []
        for i, layer in enumerate(self.extractor):
            params.append((f"extractor.{i}.weight", layer.weight, EXTRACTOR, True))
            params.append((f"extractor.{i}.bias", layer.bias, EXTRACTOR, False))
        for name, layer in (("head1", self.head1), ("head2", self.head2)):
            params.append((f"{name}.weight", layer.weight, HEADS, True))
            params.append((f"{name}.bias", layer.bias, HEADS, False))
        return params

    def copy(self):
        return ModelParams(
            [layer.copy() for layer in self.extractor],
            self.head1.copy(),
            self.head2.copy(),
        )


@dataclass
class ForwardResult:
    """Outputs of a forward pass plus the activations backprop needs"""

    features: np.ndarray
    logits1: np.ndarray
    logits2: np.ndarray
    probs1: np.ndarray
    probs2: np.ndarray
    # inputs to each extractor layer, then the features
    activations: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)

    @property
    def mean_probs(self):
        return 0.5 * (self.probs1 + self.probs2)


def as_dense(batch, cols=None):
    """
    Validate a batch as a finite float64 row-major matrix

    Args:
        batch: Array-like of shape (rows, cols)
        cols: Expected column count, if known

    Returns:
        C-contiguous float64 numpy array
    """
    matrix = np.ascontiguousarray(batch, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got {matrix.ndim} dimension(s)")
    if cols is not None and matrix.shape[1] != cols:
        raise DimensionError(f"expected {cols} columns, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise NumericalError("matrix contains non-finite entries")
    return matrix


def l2_normalize(v):
    """
    Scale a vector to unit Euclidean norm

    Raises:
        DegenerateFeatureError: if the vector has zero norm
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0.0:
        raise DegenerateFeatureError("cannot normalize a zero-norm vector")
    return v / norm


def l2_normalize_rows(matrix):
    """Row-wise l2_normalize; any zero row raises DegenerateFeatureError"""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    bad = np.flatnonzero(~(norms[:, 0] > 0.0))
    if bad.size:
        raise DegenerateFeatureError(
            f"{bad.size} zero-norm feature row(s), first at row {int(bad[0])}"
        )
    return matrix / norms


def softmax_rows(logits):
    """Numerically stable softmax of each row (max subtracted first)"""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


def softmax_row(logits):
    return softmax_rows(np.asarray(logits, dtype=np.float64)[None, :])[0]


def forward(model, batch):
    """
    Run the extractor and both heads on a batch

    Args:
        model: ModelParams
        batch: (n, input_dim) matrix

    Returns:
        ForwardResult with pre-normalization features, logits and softmax outputs
    """
    x = as_dense(batch, cols=model.input_dim)
    activations = [x]
    pre_activations = []
    h = x
    last = len(model.extractor) - 1
    for i, layer in enumerate(model.extractor):
        z = h @ layer.weight + layer.bias
        pre_activations.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        activations.append(h)
    features = h
    logits1 = features @ model.head1.weight + model.head1.bias
    logits2 = features @ model.head2.weight + model.head2.bias
    return ForwardResult(
        features=features,
        logits1=logits1,
        logits2=logits2,
        probs1=softmax_rows(logits1),
        probs2=softmax_rows(logits2),
        activations=activations,
        pre_activations=pre_activations,
    )


def predict_proba(model, batch, chunk_size=4096):
    """Averaged softmax of the two heads, evaluated in fixed-size chunks"""
    batch = as_dense(batch, cols=model.input_dim)
    out = np.empty((batch.shape[0], model.class_count))
    for start in range(0, batch.shape[0], chunk_size):
        result = forward(model, batch[start:start + chunk_size])
        out[start:start + chunk_size] = result.mean_probs
    return out


def init_model(input_dim, class_count, init_rng, head2_rng,
               hidden_sizes=(32, 32), feature_dim=16):
    """
    Build a freshly initialized model

    Extractor weights use He-normal scaling, heads use 1/sqrt(fan_in); biases start
    at zero. Head 2 draws from its own stream so the heads start apart.

    Args:
        input_dim: Width of the input feature vectors
        class_count: Number of classes C (>= 2)
        init_rng: Generator for the extractor and head 1
        head2_rng: Generator for head 2
        hidden_sizes: Widths of the ReLU hidden layers
        feature_dim: Width of the extractor output

    Returns:
        ModelParams
    """
    widths = [input_dim, *hidden_sizes, feature_dim]
    extractor = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weight = init_rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        extractor.append(DenseLayer(weight, np.zeros(fan_out)))

    def head(rng):
        weight = rng.normal(0.0, np.sqrt(1.0 / feature_dim), size=(feature_dim, class_count))
        return DenseLayer(weight, np.zeros(class_count))

    return ModelParams(extractor, head(init_rng), head(head2_rng))
