from grouplm import data
from grouplm.data import Dataset, SyntheticConfig, UserRecord
from grouplm.exceptions import DatasetLoadError, InvalidInputError
from grouplm.loglinear import Stimulus
from grouplm.mixture import Observation
import numpy as np
import filecmp
import tempfile
import unittest
import json
import os

HEADER = {'schema_version': 1, 'feature_dim': 2, 'feature_names': ['a', 'b'], 'task': 'multiclass'}


def record(user, seq, observed=0, ids=(0, 1)):
    return {'user': user, 'seq': seq, 'observed': observed,
            'candidates': [{'id': i, 'features': [float(i), 1.0]} for i in ids]}


class TestDataMethods(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.rng = np.random.default_rng(0)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, lines, name='d.jsonl'):
        path = os.path.join(self.tmp.name, name)
        with open(path, 'w') as f:
            for line in lines:
                f.write((line if isinstance(line, str) else json.dumps(line)) + '\n')
        return path

    def make_dataset(self, users):
        records = []
        for u in range(users):
            s = Stimulus([0, 1], self.rng.normal(size=(2, 2)))
            records.append(UserRecord(f'user{u}', (Observation(s, 0),)))
        return Dataset(records, 2)

    def test_load(self):
        path = self.write([HEADER, record('a', 0), record('b', 0, 1), record('a', 1, 1), record('b', 5)])
        d = data.load(path)
        self.assertEqual(d.user_ids, ['a', 'b'])
        self.assertEqual([len(u) for u in d.users], [2, 2])
        self.assertEqual(d.num_observations, 4)
        self.assertEqual(d.feature_names, ('a', 'b'))
        self.assertEqual(d.users[0].observations[1].observed, 1)

    def test_observed_id_absent(self):
        path = self.write([HEADER, record('a', 0), record('a', 1, observed=7)])
        with self.assertRaises(DatasetLoadError) as cm:
            data.load(path)
        self.assertEqual(cm.exception.record, 2)
        self.assertIn('observed id', cm.exception.rule)

    def test_schema_violations(self):
        cases = [
            [HEADER, record('a', 0, ids=(0,))],
            [HEADER, record('a', 0, ids=(0, 0))],
            [HEADER, record('a', 1), record('a', 1)],
            [HEADER, {'user': 'a', 'seq': 0, 'observed': 0,
                      'candidates': [{'id': 0, 'features': [1.0]}, {'id': 1, 'features': [1.0]}]}],
            [HEADER, 'this is not json'],
            [dict(HEADER, schema_version=2), record('a', 0)],
        ]
        for lines in cases:
            with self.assertRaises(DatasetLoadError):
                data.load(self.write(lines))

    def test_sparse_features(self):
        header = dict(HEADER, feature_dim=4, feature_names=[])
        line = {'user': 'a', 'seq': 0, 'observed': 0,
                'candidates': [{'id': 0, 'features': '0:1.5 3:-2'}, {'id': 1, 'features': [0, 0, 0, 0]}]}
        d = data.load(self.write([header, line]))
        np.testing.assert_array_equal(d.users[0].observations[0].stimulus.features[0], [1.5, 0, 0, -2])
        self.assertEqual(d.feature_names, ('f0', 'f1', 'f2', 'f3'))

    def test_binary_attribute_records(self):
        header = dict(HEADER, task='binary-attribute')
        lines = [header,
                 {'user': 'a', 'seq': 0, 'attr_features': [2.0, 0.0], 'use': True},
                 {'user': 'a', 'seq': 1, 'attr_features': '1:3', 'use': False}]
        d = data.load(self.write(lines))
        first, second = d.users[0].observations
        self.assertEqual(first.stimulus.ids, (1, -1))
        self.assertEqual(first.observed, 1)
        np.testing.assert_array_equal(second.stimulus.features, [[0, 3], [0, -3]])
        self.assertEqual(second.observed, -1)

        with self.assertRaises(DatasetLoadError):
            data.load(self.write([HEADER, lines[1]]))

        for use in ({'use': 'false'}, {'use': 1}, {'use': None}, {}):
            bad = dict({'user': 'a', 'seq': 0, 'attr_features': [1.0, 0.0]}, **use)
            with self.assertRaises(DatasetLoadError) as cm:
                data.load(self.write([header, bad]))
            self.assertEqual(cm.exception.record, 1)
            self.assertIn('"use"', cm.exception.rule)

    def test_save_and_load(self):
        d = data.generate_synthetic(SyntheticConfig(num_users=6, obs_per_user=3))
        path = os.path.join(self.tmp.name, 'synth.jsonl')
        data.save(d, path)
        loaded = data.load(path)
        self.assertEqual(loaded, d)

    def test_folds(self):
        d = self.make_dataset(63)
        folds = data.split_user_folds(d, 9, seed=1)
        self.assertEqual(len(folds), 9)
        tested = []
        for train, test in folds:
            self.assertEqual(len(test), 7)
            self.assertEqual(len(train), 56)
            self.assertFalse(set(train.user_ids) & set(test.user_ids))
            tested.extend(test.user_ids)
        self.assertCountEqual(tested, d.user_ids)

        halves = data.split_user_folds(self.make_dataset(100), 2)
        self.assertEqual([len(test) for _, test in halves], [50, 50])

    def test_folds_are_seeded(self):
        d = self.make_dataset(20)
        first = [test.user_ids for _, test in data.split_user_folds(d, 4, seed=3)]
        second = [test.user_ids for _, test in data.split_user_folds(d, 4, seed=3)]
        self.assertEqual(first, second)

    def test_fold_preconditions(self):
        d = self.make_dataset(10)
        with self.assertRaises(InvalidInputError):
            data.split_user_folds(d, 11)
        with self.assertRaises(InvalidInputError):
            data.split_user_folds(d, 1)

    def test_synthetic_defaults(self):
        d = data.generate_synthetic(SyntheticConfig())
        self.assertEqual(len(d), 100)
        self.assertEqual(d.num_observations, 1000)
        self.assertEqual(d.feature_dim, 3)
        self.assertEqual(d.feature_names, ('salience', 'distractor_1', 'distractor_2'))

    def test_synthetic_rules(self):
        cfg = SyntheticConfig(num_users=10, obs_per_user=20)
        d = data.generate_synthetic(cfg)
        truth = data.synthetic_truth(cfg)
        self.assertEqual(sum(label == 'max' for label in truth.values()), 5)
        for user in d.users:
            pick = np.argmax if truth[user.user_id] == 'max' else np.argmin
            for obs in user.observations:
                salience = obs.stimulus.features[:, 0]
                self.assertEqual(obs.position, int(pick(salience)))

    def test_synthetic_is_deterministic(self):
        cfg = SyntheticConfig(num_users=8, seed=7)
        first = os.path.join(self.tmp.name, 'a.jsonl')
        second = os.path.join(self.tmp.name, 'b.jsonl')
        data.save(data.generate_synthetic(cfg), first)
        data.save(data.generate_synthetic(cfg), second)
        self.assertTrue(filecmp.cmp(first, second, shallow=False))

        other = data.generate_synthetic(SyntheticConfig(num_users=8, seed=8))
        self.assertNotEqual(other, data.generate_synthetic(cfg))

    def test_synthetic_validation(self):
        with self.assertRaises(InvalidInputError):
            SyntheticConfig(candidates_per_scene=1)
        with self.assertRaises(InvalidInputError):
            SyntheticConfig(num_users=10, fraction_max_group=0.55)
        with self.assertRaises(InvalidInputError):
            SyntheticConfig(noise_rate=1.0)

    def test_truth_file(self):
        cfg = SyntheticConfig(num_users=4)
        path = data.truth_path(os.path.join(self.tmp.name, 'synth.jsonl'))
        self.assertTrue(str(path).endswith('synth.truth'))
        data.write_truth(data.synthetic_truth(cfg), path)
        self.assertEqual(data.read_truth(path), {'u0': 'max', 'u1': 'max', 'u2': 'min', 'u3': 'min'})


if __name__ == '__main__':
    unittest.main()
