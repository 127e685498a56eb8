"""
Main entry point for the IDN Sample Selector
"""
import argparse
import glob
import json
import logging
import os
import re
import sys
from dataclasses import asdict

import numpy as np
import pandas as pd

from idn_sample_selector.analysis.metrics import (
    MetricRecord,
    auc_or_none,
    selection_precision,
    selection_recall,
)
from idn_sample_selector.experiments.presets import BUILTIN_PRESETS, get_preset, run_ablation, run_sweep
from idn_sample_selector.model.checkpoint import save_checkpoint
from idn_sample_selector.reports.run_reporter import RunReporter, read_partitions
from idn_sample_selector.training.trainer import build_datasets, run_training
from idn_sample_selector.utils.config import TrainConfig, apply_overrides, dump_config, load_config
from idn_sample_selector.utils.dataset_io import DatasetFile
from idn_sample_selector.utils.errors import ConfigError, NumericalError, SelectorError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _common_arguments():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument('--config', help='Path to a TOML config file')
    parent.add_argument('--preset', help='Name of a built-in experiment preset')
    parent.add_argument('--seed', type=int, help='Root seed (overrides train.seed)')
    parent.add_argument('--out', default='out', help='Output directory (default: out)')
    parent.add_argument(
        '--set',
        action='append',
        default=[],
        metavar='KEY=VALUE',
        help='Override a setting, e.g. --set train.theta=0.6 (repeatable)'
    )
    parent.add_argument(
        '--log-level',
        default='INFO',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging verbosity'
    )
    return parent


def build_parser():
    parser = argparse.ArgumentParser(
        prog='idn-sample-selector',
        description='Two-stage clean-sample selection under instance-dependent label noise'
    )
    common = _common_arguments()
    sub = parser.add_subparsers(dest='command', required=True)

    sub.add_parser('gen-data', parents=[common], help='Generate a noisy dataset and its test set')

    train = sub.add_parser('train', parents=[common], help='Train and write the run report')
    train.add_argument('--data', help='Training dataset file (generated from the config if omitted)')
    train.add_argument('--test-data', help='Test dataset file (defaults to test.csv next to --data)')
    train.add_argument('--dump-partitions', action='store_true',
                       help='Write per-epoch partitions and discrepancies')
    train.add_argument('--checkpoint', action='store_true', help='Save the final model to model.npz')

    evaluate = sub.add_parser('eval', parents=[common], help='Recompute metrics from a run directory')
    evaluate.add_argument('--data', help='Dataset file (defaults to <out>/dataset.csv)')

    for name, text in (('ablate', 'Run the four-cell stage ablation'),
                       ('sweep', 'Run the [sweep] grid of the config')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--seeds', help='Comma-separated seeds (default: preset seeds or --seed)')

    sub.add_parser('presets', parents=[common], help='List the built-in presets')
    return parser


def parse_overrides(pairs):
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition('=')
        if not sep or not key:
            raise ConfigError(f"expected KEY=VALUE, got {pair!r}", field="--set")
        overrides[key.strip()] = value.strip()
    return overrides


def resolve_config(args):
    """Config from --preset / --config, then --set and --seed overrides"""
    base = load_config(args.config) if args.config else None
    if args.preset:
        config = get_preset(args.preset).config(base=base)
    else:
        config = base or TrainConfig().validate()
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["train.seed"] = args.seed
    return apply_overrides(config, overrides) if overrides else config


def resolve_seeds(args, config):
    if getattr(args, 'seeds', None):
        try:
            return [int(s) for s in args.seeds.split(',') if s.strip()]
        except ValueError:
            raise ConfigError(f"expected comma-separated integers, got {args.seeds!r}", field="--seeds")
    if args.preset and args.seed is None:
        return list(get_preset(args.preset).seeds)
    return [config.seed]


def _load_datasets(args, config):
    dataset = DatasetFile(args.data).read()
    test_path = args.test_data or os.path.join(os.path.dirname(args.data), 'test.csv')
    if os.path.exists(test_path):
        test_set = DatasetFile(test_path).read()
    else:
        _, test_set = build_datasets(config)
    if test_set.dim != dataset.dim or test_set.class_count != dataset.class_count:
        raise ConfigError(
            f"test set is {test_set.dim}-d with {test_set.class_count} classes, "
            f"training set {dataset.dim}-d with {dataset.class_count}",
            field="data",
        )
    return dataset, test_set


def command_gen_data(args, config):
    os.makedirs(args.out, exist_ok=True)
    train, test = build_datasets(config)
    DatasetFile(os.path.join(args.out, 'dataset.csv')).write(train)
    DatasetFile(os.path.join(args.out, 'test.csv')).write(test)
    dump_config(config, os.path.join(args.out, 'config.toml'))
    print(f"Generated {len(train)} training samples (noise rate {train.noise_rate:.4f}) "
          f"and {len(test)} test samples in: {args.out}")
    return EXIT_OK


def command_train(args, config):
    reporter = RunReporter(args.out)
    dataset, test_set = _load_datasets(args, config) if args.data else build_datasets(config)
    DatasetFile(os.path.join(args.out, 'dataset.csv')).write(dataset)
    dump_config(config, os.path.join(args.out, 'config.toml'))

    callback = reporter.write_partitions if args.dump_partitions else None
    report = run_training(config, dataset, test_set, epoch_callback=callback)
    json_path, csv_path = reporter.write_report(report)
    if args.checkpoint:
        save_checkpoint(os.path.join(args.out, 'model.npz'), report.model, report.optim)

    print(f"Final test accuracy: {report.final_accuracy:.4f}")
    print(f"Training complete. Report saved to: {json_path}")
    print(f"Per-epoch summary saved to: {csv_path}")
    return EXIT_OK


def evaluate_run(out_dir, data_path=None, seed=0):
    """
    Recompute selection metrics from a run directory's partition dumps

    Args:
        out_dir: Directory holding dataset.csv and partitions/epoch_*.csv
        data_path: Dataset file to use instead of <out_dir>/dataset.csv
        seed: Seed recorded on every MetricRecord

    Returns:
        List of MetricRecord
    """
    dataset = DatasetFile(data_path or os.path.join(out_dir, 'dataset.csv')).read()
    truth = pd.Series(dataset.is_clean, index=dataset.ids)
    noisy = pd.Series(dataset.noisy_labels, index=dataset.ids)
    paths = sorted(glob.glob(os.path.join(out_dir, 'partitions', 'epoch_*.csv')))
    if not paths:
        raise ConfigError(f"no partition dumps under {out_dir}; train with --dump-partitions",
                          field="--out")

    records = []
    for path in paths:
        epoch = int(re.search(r'epoch_(\d+)\.csv$', path).group(1))
        for stage, frame in read_partitions(path).items():
            suffix = stage.lower()
            is_true = truth.loc[frame['id']].to_numpy()
            selected = frame['is_clean'].to_numpy(dtype=bool)
            values = {
                f"auc_{suffix}": auc_or_none(frame['posterior_clean'].to_numpy(), is_true),
                f"n_{suffix}": float(selected.sum()),
                f"precision_{suffix}": selection_precision(selected, is_true),
                f"recall_{suffix}": selection_recall(selected, is_true),
            }
            labels = noisy.loc[frame['id']].to_numpy()[selected]
            if labels.size:
                shares = np.bincount(labels, minlength=dataset.class_count) / labels.size
                values[f"class_share_variance_{suffix}"] = float(np.var(shares))
                for c, share in enumerate(shares):
                    values[f"class_share_{suffix}_c{c}"] = float(share)
            for metric, value in values.items():
                if value is not None and np.isfinite(value):
                    records.append(MetricRecord(metric, value, epoch, seed))
    return records


def command_eval(args, config):
    seed = config.seed
    report_path = os.path.join(args.out, 'report.json')
    if args.seed is None and os.path.exists(report_path):
        with open(report_path) as f:
            seed = json.load(f)["config"]["train"]["seed"]
    records = evaluate_run(args.out, args.data, seed)
    path = RunReporter(args.out).write_table(
        'metrics', [asdict(r) for r in records], columns=['metric', 'value', 'epoch', 'seed']
    )
    print(f"Recomputed {len(records)} metrics. Saved to: {path}")
    return EXIT_OK


def command_ablate(args, config):
    seeds = resolve_seeds(args, config)
    rows = run_ablation(config, seeds, output_dir=args.out)
    path = RunReporter(args.out).write_table('ablation_summary', rows)
    for row in rows:
        print(f"{row['cell']:>12}: final accuracy {row['final_accuracy']:.4f}")
    print(f"Ablation summary saved to: {path}")
    return EXIT_OK


def command_sweep(args, config):
    seeds = resolve_seeds(args, config)
    rows = run_sweep(config, seeds, output_dir=args.out)
    path = RunReporter(args.out).write_table('sweep_summary', rows)
    print(f"Swept {len(rows)} grid points. Summary saved to: {path}")
    return EXIT_OK


def command_presets(args, config):
    for name, preset in sorted(BUILTIN_PRESETS.items()):
        data = preset.data
        print(f"{name}: {data.class_count} classes x {data.n_per_class}, d={data.dim}, "
              f"noise {preset.noise.kind} {preset.noise.ratio}, seeds {preset.seeds}")
    return EXIT_OK


COMMANDS = {
    'gen-data': command_gen_data,
    'train': command_train,
    'eval': command_eval,
    'ablate': command_ablate,
    'sweep': command_sweep,
    'presets': command_presets,
}


def cli(argv=None):
    """
    Run one subcommand

    Returns:
        Exit status: 0 on success, 2 on configuration or input errors,
        3 on a numerical abort
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except NumericalError as e:
        print(f"Numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SelectorError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def main():
    """
    Main function to run the command-line interface.
    """
    return cli()


if __name__ == "__main__":
    sys.exit(main())
