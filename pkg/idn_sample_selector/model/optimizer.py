"""
Module for SGD with momentum and decoupled weight decay
"""
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from idn_sample_selector.model.losses import loss_and_gradients
from idn_sample_selector.utils.errors import ConfigError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class OptimState:
    """
    Momentum buffers mirroring every model parameter plus the step hyper-parameters.

    Weight decay is decoupled from the gradient and applied to weights only,
    never to biases.
    """

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    buffers: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ConfigError("must be non-negative", field="learning_rate")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("must be in [0, 1)", field="momentum")
        if not self.weight_decay >= 0.0:
            raise ConfigError("must be non-negative", field="weight_decay")

    @classmethod
    def for_model(cls, model, learning_rate, momentum=0.9, weight_decay=5e-4):
        buffers = {name: np.zeros_like(array) for name, array, _, _ in model.named_parameters()}
        return cls(learning_rate, momentum, weight_decay, buffers)

    def copy(self):
        return OptimState(
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            {name: buf.copy() for name, buf in self.buffers.items()},
        )


def sgd_update(model, optim, grads, trainable):
    """
    Apply one in-place SGD step to the trainable parameter groups

    Args:
        model: ModelParams, modified in place
        optim: OptimState, its buffers modified in place
        grads: Parameter name -> gradient
        trainable: Set of parameter groups to update; others keep parameters and buffers
    """
    lr = optim.learning_rate
    for name, param, group, is_weight in model.named_parameters():
        if group not in trainable:
            continue
        buf = optim.buffers.get(name)
        if buf is None:
            buf = optim.buffers[name] = np.zeros_like(param)
        if buf.shape != param.shape:
            raise DimensionError(f"momentum buffer {name} has shape {buf.shape}, parameter {param.shape}")
        buf *= optim.momentum
        buf += grads[name]
        if is_weight and optim.weight_decay:
            param -= lr * (buf + optim.weight_decay * param)
        else:
            param -= lr * buf


def backward_step(model, optim, batch, loss_spec):
    """
    Compute the routed gradients of `loss_spec` on `batch` and take one SGD step

    Args:
        model: ModelParams, updated in place
        optim: OptimState
        batch: Input matrix the loss terms index into
        loss_spec: LossSpec; only its `trainable` groups are updated

    Returns:
        Tuple of (model, LossEvaluation)
    """
    evaluation, grads = loss_and_gradients(model, batch, loss_spec)
    sgd_update(model, optim, grads, loss_spec.trainable)
    logger.debug("step lr=%g loss=%.6f %s", optim.learning_rate, evaluation.total, evaluation.components)
    return model, evaluation
