from grouplm import cli, data, training
from grouplm.exceptions import NumericalFailureError
from grouplm.mixture import ModelParams
from unittest import mock
import pandas as pd
import numpy as np
import contextlib
import argparse
import filecmp
import tempfile
import unittest
import io
import os


def failing_fold(train, test, h):
    raise NumericalFailureError('objective is not finite', 7, restart=1)


class TestCliMethods(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def run_cli(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = cli.main(['-q'] + list(argv))
        return code, out.getvalue(), err.getvalue()

    def small_dataset(self, name='small.jsonl'):
        path = self.path(name)
        code, _, _ = self.run_cli('synthesize', '--out', path, '--num-users', '10', '--obs-per-user', '5')
        self.assertEqual(code, 0)
        return path

    def test_synthesize_defaults(self):
        code, _, _ = self.run_cli('synthesize', '--out', self.path('synth.jsonl'))
        self.assertEqual(code, 0)
        with open(self.path('synth.jsonl')) as f:
            self.assertEqual(len(f.read().splitlines()), 1001)
        truth = data.read_truth(self.path('synth.truth'))
        self.assertEqual(len(truth), 100)

    def test_synthesize_is_reproducible(self):
        self.run_cli('synthesize', '--out', self.path('a.jsonl'), '--seed', '7')
        self.run_cli('synthesize', '--out', self.path('b.jsonl'), '--seed', '7')
        self.assertTrue(filecmp.cmp(self.path('a.jsonl'), self.path('b.jsonl'), shallow=False))

    def test_synthesize_rejects_bad_config(self):
        code, _, err = self.run_cli('synthesize', '--out', self.path('x.jsonl'), '--candidates-per-scene', '1')
        self.assertEqual(code, 1)
        self.assertIn('candidates_per_scene', err)

    def test_missing_dataset_is_a_usage_error(self):
        with self.assertRaises(SystemExit) as cm:
            self.run_cli('train', '--model', self.path('m.json'))
        self.assertEqual(cm.exception.code, 1)

    def test_train(self):
        dataset = self.small_dataset()
        model = self.path('model.json')
        code, out, _ = self.run_cli('train', '--dataset', dataset, '--model', model, '--groups', '2',
                                    '--sigma-pi', '0.3', '--sigma-rho', '1.0', '--restarts', '2')
        self.assertEqual(code, 0)
        self.assertIn('final objective', out)
        m = ModelParams.load(model)
        self.assertEqual(m.K, 2)
        self.assertEqual(m.metadata['hyperparams']['sigma_pi'], 0.3)
        self.assertEqual(m.metadata['hyperparams']['sigma_rho'], 1.0)
        trace = pd.read_csv(self.path('model.trace.csv'))
        self.assertListEqual(list(trace.columns), training.TRACE_COLUMNS)

    def test_train_is_reproducible(self):
        dataset = self.small_dataset()
        for name in ('a.json', 'b.json'):
            code, _, _ = self.run_cli('train', '--dataset', dataset, '--model', self.path(name),
                                      '--restarts', '2', '--seed', '3')
            self.assertEqual(code, 0)
        self.assertTrue(filecmp.cmp(self.path('a.json'), self.path('b.json'), shallow=False))

    def test_quiet_train_writes_nothing_to_stderr(self):
        dataset = self.small_dataset()
        code, _, err = self.run_cli('train', '--dataset', dataset, '--model', self.path('m.json'),
                                    '--restarts', '2')
        self.assertEqual(code, 0)
        self.assertEqual(err, '')

    def test_numerical_failure_exit_code(self):
        dataset = self.small_dataset()
        with mock.patch('grouplm.training.em_fit', side_effect=NumericalFailureError('objective is not finite', 3)):
            code, _, err = self.run_cli('train', '--dataset', dataset, '--model', self.path('m.json'))
        self.assertEqual(code, 2)
        self.assertIn('iteration 3', err)

    def test_train_single_group_is_direct_fit(self):
        dataset = self.small_dataset()
        model = self.path('single.json')
        self.run_cli('train', '--dataset', dataset, '--model', model, '--groups', '1', '--restarts', '1')
        direct = training.fit_single(data.load(dataset), training.Hyperparams(K=1))
        np.testing.assert_allclose(ModelParams.load(model).group_weights, direct.group_weights, atol=1e-6)

    def test_eval(self):
        dataset = self.small_dataset()
        model = self.path('model.json')
        self.run_cli('train', '--dataset', dataset, '--model', model, '--restarts', '1')
        code, out, _ = self.run_cli('eval', '--model', model, '--dataset', dataset, '--out', self.path('report'))
        self.assertEqual(code, 0)
        self.assertIn('sequential', out)
        curves = pd.read_csv(self.path(os.path.join('report', 'sequential_curves.csv')))
        self.assertEqual(len(curves), 5)
        for name in ('sequential_summary.json', 'static_curves.csv', 'static_predictions.csv'):
            self.assertTrue(os.path.exists(self.path(os.path.join('report', name))))

    def test_eval_dimension_mismatch(self):
        dataset = self.small_dataset()
        model = self.path('narrow.json')
        ModelParams([0.0], [[1.0, 2.0]]).save(model)
        code, _, err = self.run_cli('eval', '--model', model, '--dataset', dataset)
        self.assertEqual(code, 1)
        self.assertIn('3', err)
        self.assertIn('2', err)

    def test_xval_sweep(self):
        dataset = self.small_dataset()
        out = self.path('xval')
        code, _, _ = self.run_cli('xval', '--dataset', dataset, '--folds', '2', '--groups-list', '1-2',
                                  '--restarts', '1', '--out', out)
        self.assertEqual(code, 0)
        sweep = pd.read_csv(os.path.join(out, 'sweep.csv'))
        self.assertListEqual(list(sweep['groups']), [1, 2])
        self.assertTrue(os.path.exists(os.path.join(out, 'K2_sigma-pi0.3_sigma-rho1', 'static_summary.json')))

    def test_xval_is_reproducible_across_runs_and_workers(self):
        dataset = self.small_dataset()
        runs = {'first': [], 'second': [], 'pooled': ['--workers', '2']}
        for name, extra in runs.items():
            code, _, _ = self.run_cli('xval', '--dataset', dataset, '--folds', '2', '--groups-list', '1-2',
                                      '--restarts', '2', '--out', self.path(name), *extra)
            self.assertEqual(code, 0)

        reference = self.path('first')
        files = sorted(os.path.relpath(os.path.join(root, f), reference)
                       for root, _, names in os.walk(reference) for f in names)
        self.assertIn('sweep.csv', files)
        self.assertIn(os.path.join('K2_sigma-pi0.3_sigma-rho1', 'sequential_predictions.csv'), files)
        for other in ('second', 'pooled'):
            match, mismatch, errors = filecmp.cmpfiles(reference, self.path(other), files, shallow=False)
            self.assertEqual((mismatch, errors), ([], []), other)

    def test_worker_failure_keeps_its_type(self):
        d = data.load(self.small_dataset())
        folds = data.split_user_folds(d, 2)
        with self.assertRaises(NumericalFailureError) as cm:
            cli._run_folds(folds, training.Hyperparams(K=2, restarts=1), 2, job=failing_fold)
        self.assertEqual(cm.exception.iteration, 7)
        self.assertEqual(cm.exception.restart, 1)

    def test_xval_too_many_folds(self):
        code, _, _ = self.run_cli('xval', '--dataset', self.small_dataset(), '--folds', '200')
        self.assertEqual(code, 1)

    def test_inspect(self):
        dataset = self.small_dataset()
        model = self.path('model.json')
        self.run_cli('train', '--dataset', dataset, '--model', model, '--restarts', '1')
        code, out, _ = self.run_cli('inspect', '--model', model, '--dataset', dataset)
        self.assertEqual(code, 0)
        self.assertIn('salience', out)
        self.assertIn('responsibility mass', out)
        self.assertIn('dataset: 10 users, 50 observations, longest history 5', out)

    def test_missing_file(self):
        code, _, _ = self.run_cli('inspect', '--model', self.path('nope.json'))
        self.assertEqual(code, 1)

    def test_int_list(self):
        self.assertEqual(cli.int_list('1-3,6'), [1, 2, 3, 6])
        with self.assertRaises(argparse.ArgumentTypeError):
            cli.int_list('a,b')

    def test_check_user_disjoint(self):
        d = data.load(self.small_dataset())
        with self.assertRaises(Exception):
            cli.check_user_disjoint([(d, d)])
        cli.check_user_disjoint(data.split_user_folds(d, 2))


if __name__ == '__main__':
    unittest.main()
