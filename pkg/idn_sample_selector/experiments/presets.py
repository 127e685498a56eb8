"""
Module for named experiment presets, the ablation grid and hyper-parameter sweeps
"""
import itertools
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Dict, List

import numpy as np

from idn_sample_selector.noise.injectors import BOUNDARY, CLASSIFICATION, NONE, SYMMETRIC, NoiseSpec
from idn_sample_selector.reports.run_reporter import RunReporter
from idn_sample_selector.training.trainer import run_training
from idn_sample_selector.utils.config import DatasetSpec, TrainConfig, apply_overrides
from idn_sample_selector.utils.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = [0, 1, 2, 3, 4]

# (cell name, overrides); stage1-only also drops the extractor-side penalty
ABLATION_CELLS = [
    ("neither", {"train.use_stage1": False, "train.use_stage2": False}),
    ("stage1-only", {"train.use_stage1": True, "train.use_stage2": False, "train.lambda_max": 0.0}),
    ("stage2-only", {"train.use_stage1": False, "train.use_stage2": True}),
    ("both", {"train.use_stage1": True, "train.use_stage2": True}),
]

SUMMARY_COLUMNS = ["final_accuracy", "auc_s1", "auc_s2", "precision_s1", "precision_s2",
                   "n_s1", "n_s2"]


@dataclass
class ExperimentPreset:
    """A dataset, a noise model and config overrides, repeated over seeds"""

    name: str
    data: DatasetSpec
    noise: NoiseSpec
    overrides: Dict[str, object] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("needs at least one seed", field=f"preset.{self.name}")

    def config(self, base=None, seed=None):
        """
        TrainConfig for this preset

        Args:
            base: Config whose other settings are kept (defaults otherwise)
            seed: Root seed; the preset's first seed when None
        """
        base = base or TrainConfig()
        config = replace(base, data=replace(self.data), noise=replace(self.noise))
        overrides = dict(self.overrides)
        overrides["train.seed"] = self.seeds[0] if seed is None else seed
        return apply_overrides(config, overrides)


BUILTIN_PRESETS = {
    preset.name: preset
    for preset in (
        ExperimentPreset("boundary-idn", DatasetSpec(n_per_class=500, class_count=4, dim=8),
                         NoiseSpec(BOUNDARY, 0.4)),
        ExperimentPreset("imbalanced",
                         DatasetSpec(n_per_class=500, class_count=4, dim=8,
                                     imbalance_ratios=[0.55, 0.25, 0.12, 0.08]),
                         NoiseSpec(BOUNDARY, 0.4)),
        ExperimentPreset("classification-idn", DatasetSpec(n_per_class=500, class_count=4, dim=8),
                         NoiseSpec(CLASSIFICATION, 0.4)),
        ExperimentPreset("symmetric", DatasetSpec(n_per_class=500, class_count=4, dim=8),
                         NoiseSpec(SYMMETRIC, 0.4)),
        ExperimentPreset("clean", DatasetSpec(n_per_class=500, class_count=4, dim=8),
                         NoiseSpec(NONE, 0.0)),
        ExperimentPreset("smoke", DatasetSpec(n_per_class=40, class_count=3, dim=4, n_test_per_class=20),
                         NoiseSpec(BOUNDARY, 0.3),
                         overrides={"train.epochs": 4, "train.warmup_epochs": 2, "train.n_max": 5,
                                    "train.hidden_sizes": [16], "train.feature_dim": 8,
                                    "train.lr_decay_epoch": 3, "train.batch_size": 32},
                         seeds=[0, 1]),
    )
}


def get_preset(name):
    try:
        return BUILTIN_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(BUILTIN_PRESETS))}",
                          field="preset")


def _mean(values):
    values = np.array([np.nan if v is None else v for v in values], dtype=np.float64)
    if values.size == 0 or np.all(np.isnan(values)):
        return None
    return float(np.nanmean(values))


def summarize_run(report):
    """Headline numbers of one run: final accuracy plus epoch-averaged selection metrics"""
    epochs = report.epochs
    return {
        "final_accuracy": report.final_accuracy,
        "auc_s1": _mean([e.auc_s1 for e in epochs]),
        "auc_s2": _mean([e.auc_s2 for e in epochs]),
        "precision_s1": _mean([e.precision_s1 for e in epochs]),
        "precision_s2": _mean([e.precision_s2 for e in epochs]),
        "n_s1": epochs[-1].n_s1 if epochs else None,
        "n_s2": epochs[-1].n_s2 if epochs else None,
    }


def run_seeds(config, seeds, output_dir=None, label="run"):
    """
    Train once per seed, optionally writing each run to `<output_dir>/<label>/seed_<s>`

    Returns:
        List of per-seed summaries
    """
    summaries = []
    for seed in seeds:
        seeded = apply_overrides(config, {"train.seed": seed})
        logger.info("%s: seed %d", label, seed)
        report = run_training(seeded)
        if output_dir is not None:
            RunReporter(os.path.join(output_dir, label, f"seed_{seed}")).write_report(report)
        summaries.append(dict(summarize_run(report), seed=seed))
    return summaries


def _aggregate(summaries):
    return {key: _mean([s[key] for s in summaries]) for key in SUMMARY_COLUMNS}


def run_ablation(config, seeds, output_dir=None):
    """
    The four-cell grid: neither stage, stage 1 only, stage 2 only, both

    Returns:
        Four summary rows (cell, seeds, seed-averaged metrics), in grid order
    """
    rows = []
    for cell, overrides in ABLATION_CELLS:
        cell_config = apply_overrides(config, overrides)
        summaries = run_seeds(cell_config, seeds, output_dir, label=cell)
        rows.append(dict(cell=cell, seeds=len(seeds), **_aggregate(summaries)))
        logger.info("ablation %s: final accuracy %s", cell, rows[-1]["final_accuracy"])
    return rows


def sweep_grid(sweep):
    """
    Cartesian product of the sweep lists

    Args:
        sweep: Mapping train-field name -> list of values

    Returns:
        List of dicts, keys in sorted order, last key varying fastest
    """
    keys = sorted(sweep)
    return [dict(zip(keys, values)) for values in itertools.product(*(sweep[k] for k in keys))]


def run_sweep(config, seeds, output_dir=None):
    """
    Train every point of `config.sweep` over the given seeds

    Returns:
        One row per grid point: the swept values plus seed-averaged metrics
    """
    if not config.sweep:
        raise ConfigError("no [sweep] section in the config", field="sweep")
    rows = []
    for index, point in enumerate(sweep_grid(config.sweep)):
        point_config = apply_overrides(config, {f"train.{k}": v for k, v in point.items()})
        point_config.sweep = {}
        summaries = run_seeds(point_config, seeds, output_dir, label=f"point_{index:03d}")
        rows.append(dict(point, seeds=len(seeds), **_aggregate(summaries)))
    return rows
