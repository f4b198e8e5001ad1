from grouplm.exceptions import DatasetLoadError, InvalidInputError, NumericalFailureError
import unittest
import pickle


class TestExceptions(unittest.TestCase):

    def test_numerical_failure_pickles(self):
        for restart in (None, 2):
            e = NumericalFailureError('objective is not finite', 4, restart)
            copy = pickle.loads(pickle.dumps(e))
            self.assertIsInstance(copy, NumericalFailureError)
            self.assertEqual((copy.message, copy.iteration, copy.restart), ('objective is not finite', 4, restart))
            self.assertEqual(str(copy), str(e))

    def test_dataset_load_error_pickles(self):
        copy = pickle.loads(pickle.dumps(DatasetLoadError(12, 'missing field "seq"')))
        self.assertIsInstance(copy, InvalidInputError)
        self.assertEqual((copy.record, copy.rule), (12, 'missing field "seq"'))
        self.assertEqual(str(copy), 'record 12: missing field "seq"')


if __name__ == '__main__':
    unittest.main()
