"""
Module for saving and restoring model and optimizer state
"""
import numpy as np

from idn_sample_selector.model.network import DenseLayer, ModelParams
from idn_sample_selector.model.optimizer import OptimState
from idn_sample_selector.utils.errors import ConfigError

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model, optim):
    """
    Write every shape, parameter and momentum buffer to a `.npz` archive.
    Arrays are stored as raw float64, so a round trip is bit-exact.
    """
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "extractor_layers": np.array(len(model.extractor)),
        "optim_hyper": np.array([optim.learning_rate, optim.momentum, optim.weight_decay]),
    }
    for name, array, _, _ in model.named_parameters():
        arrays[f"param/{name}"] = array
    for name, buf in optim.buffers.items():
        arrays[f"buffer/{name}"] = buf
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint

    Returns:
        Tuple of (ModelParams, OptimState)
    """
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}", field="checkpoint")
        n_layers = int(data["extractor_layers"])
        extractor = [
            DenseLayer(data[f"param/extractor.{i}.weight"].copy(), data[f"param/extractor.{i}.bias"].copy())
            for i in range(n_layers)
        ]
        head1 = DenseLayer(data["param/head1.weight"].copy(), data["param/head1.bias"].copy())
        head2 = DenseLayer(data["param/head2.weight"].copy(), data["param/head2.bias"].copy())
        lr, momentum, weight_decay = (float(v) for v in data["optim_hyper"])
        buffers = {
            key[len("buffer/"):]: data[key].copy() for key in data.files if key.startswith("buffer/")
        }
    return ModelParams(extractor, head1, head2), OptimState(lr, momentum, weight_decay, buffers)
