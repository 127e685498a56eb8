"""
Unit tests for the command-line interface
"""
import io
import json
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from unittest.mock import patch

import pandas as pd

from idn_sample_selector.main import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, cli
from idn_sample_selector.utils.errors import NumericalError

QUICK = ['--preset', 'smoke', '--log-level', 'WARNING']


class TestCli(unittest.TestCase):
    """Test class for the idn-sample-selector subcommands"""

    def setUp(self):
        """Set up test fixtures"""
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.test_dir)

    def path(self, *parts):
        return os.path.join(self.test_dir, *parts)

    def run_cli(self, *argv):
        """Run the CLI quietly and return (exit code, stderr text)"""
        err = io.StringIO()
        with redirect_stdout(io.StringIO()), redirect_stderr(err):
            code = cli(list(argv))
        return code, err.getvalue()

    def read(self, *parts):
        with open(self.path(*parts), 'rb') as f:
            return f.read()

    def test_presets(self):
        """Test listing presets"""
        out = io.StringIO()
        with redirect_stdout(out):
            self.assertEqual(cli(['presets']), EXIT_OK)
        self.assertIn('boundary-idn', out.getvalue())

    def test_usage_errors(self):
        """Test that bad flags and overrides exit with status 2"""
        code, _ = self.run_cli('train', '--bogus')
        self.assertEqual(code, EXIT_CONFIG)
        code, _ = self.run_cli('train', *QUICK, '--set', 'theta')
        self.assertEqual(code, EXIT_CONFIG)
        code, _ = self.run_cli('train', '--preset', 'nope', '--out', self.path('x'))
        self.assertEqual(code, EXIT_CONFIG)

    def test_malformed_config_names_field(self):
        """Test that a bad config value is reported by its dotted name"""
        config_path = self.path('bad.toml')
        with open(config_path, 'w') as f:
            f.write('[train]\ntheta = 2.0\n')
        code, err = self.run_cli('train', '--config', config_path, '--out', self.path('run'))
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('train.theta', err)
        self.assertFalse(os.path.exists(self.path('run', 'report.json')))

    def test_numerical_abort(self):
        """Test that a diverging run exits with status 3"""
        with patch('idn_sample_selector.main.run_training',
                   side_effect=NumericalError('non-finite loss value nan', term='L_U')):
            code, err = self.run_cli('train', *QUICK, '--out', self.path('run'))
        self.assertEqual(code, EXIT_NUMERICAL)
        self.assertIn('L_U', err)

    def test_generate_train_evaluate(self):
        """Test gen-data -> train --dump-partitions -> eval on the same files"""
        data_dir = self.path('data')
        run_dir = self.path('run')
        self.assertEqual(self.run_cli('gen-data', *QUICK, '--out', data_dir)[0], EXIT_OK)
        self.assertTrue(os.path.exists(os.path.join(data_dir, 'test.csv')))

        code, _ = self.run_cli('train', *QUICK, '--data', os.path.join(data_dir, 'dataset.csv'),
                               '--out', run_dir, '--dump-partitions', '--checkpoint')
        self.assertEqual(code, EXIT_OK)
        for name in ('report.json', 'epochs.csv', 'config.toml', 'model.npz',
                     os.path.join('partitions', 'epoch_002.csv')):
            self.assertTrue(os.path.exists(os.path.join(run_dir, name)), name)

        self.assertEqual(self.run_cli('eval', '--out', run_dir, '--log-level', 'WARNING')[0], EXIT_OK)
        metrics = pd.read_csv(os.path.join(run_dir, 'metrics.csv'))
        with open(os.path.join(run_dir, 'report.json')) as f:
            report = json.load(f)
        recomputed = metrics[metrics['metric'] == 'auc_s2'].set_index('epoch')['value']
        for record in report['epochs']:
            if record['auc_s2'] is not None:
                self.assertAlmostEqual(recomputed.loc[record['epoch']], record['auc_s2'], places=12)
            n_s1 = metrics[(metrics['metric'] == 'n_s1') & (metrics['epoch'] == record['epoch'])]
            self.assertEqual(n_s1['value'].iloc[0], record['n_s1'])

    def test_eval_without_dumps(self):
        """Test that eval on a run without partitions fails with status 2"""
        self.assertEqual(self.run_cli('train', *QUICK, '--out', self.path('run'))[0], EXIT_OK)
        code, err = self.run_cli('eval', '--out', self.path('run'), '--log-level', 'WARNING')
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn('--dump-partitions', err)

    def test_same_seed_same_bytes(self):
        """Test that two runs with one seed write identical reports"""
        for name in ('a', 'b'):
            code, _ = self.run_cli('train', *QUICK, '--seed', '7', '--out', self.path(name))
            self.assertEqual(code, EXIT_OK)
        for name in ('report.json', 'epochs.csv'):
            self.assertEqual(self.read('a', name), self.read('b', name))

    def test_ablate(self):
        """Test the four-row ablation summary"""
        code, _ = self.run_cli('ablate', *QUICK, '--seeds', '0', '--out', self.path('ablation'))
        self.assertEqual(code, EXIT_OK)
        summary = pd.read_csv(self.path('ablation', 'ablation_summary.csv'))
        self.assertEqual(summary['cell'].tolist(), ['neither', 'stage1-only', 'stage2-only', 'both'])

    def test_sweep(self):
        """Test a sweep given on the command line through a config file"""
        config_path = self.path('sweep.toml')
        with open(config_path, 'w') as f:
            f.write('[sweep]\nn_max = [0, 5]\n')
        code, _ = self.run_cli('sweep', *QUICK, '--config', config_path, '--seeds', '0',
                               '--out', self.path('sweep'))
        self.assertEqual(code, EXIT_OK)
        summary = pd.read_csv(self.path('sweep', 'sweep_summary.csv'))
        self.assertEqual(summary['n_max'].tolist(), [0, 5])


if __name__ == '__main__':
    unittest.main()
