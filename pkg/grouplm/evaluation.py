"""Predict-then-observe evaluation of trained models.

Every test user starts unseen. In sequential mode each of the user's
observations is first predicted from the current group posterior and only then
added to the user's history; in static mode every observation is predicted
from the prior mixture alone, which is also how a group-free baseline
is scored.

Metrics pool all predictions: accuracy, and for binary attribute tasks the
confusion counts and F1 of the positive class (+1, "attribute used").
Per-position curves aggregate the i-th observation of every user.
"""

from dataclasses import dataclass
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
from statsmodels.stats.proportion import proportion_confint

from grouplm.exceptions import InvalidInputError
from grouplm.loglinear import predict
from grouplm.mixture import AdaptationSession, initial_state, posterior_entropy, predict_new_user

logger = logging.getLogger(__name__)

POSITIVE = 1
PREDICTION_COLUMNS = ['user', 'position', 'gold', 'predicted', 'correct', 'entropy']
CURVE_COLUMNS = ['position', 'accuracy', 'f1', 'mean_entropy', 'n', 'accuracy_low', 'accuracy_high']


def f1_score(tp, fp, fn):
    """F1 = 2PR / (P + R), defined as 0 when P + R = 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def confusion_counts(predictions):
    """TP, FP, FN, TN of the positive class over a prediction log."""
    gold = predictions['gold'].to_numpy() == POSITIVE
    pred = predictions['predicted'].to_numpy() == POSITIVE
    return {
        'tp': int(np.sum(gold & pred)),
        'fp': int(np.sum(~gold & pred)),
        'fn': int(np.sum(gold & ~pred)),
        'tn': int(np.sum(~gold & ~pred)),
    }


def micro_f1(predictions, task='binary-attribute'):
    """F1 of the positive class from counts pooled over every prediction.

    Args:
      predictions: DataFrame with 'gold' and 'predicted' columns, typically
        the concatenated logs of all folds.
      task: task kind of the data the predictions come from.

    Raises:
      InvalidInputError: for non-binary tasks.
    """
    labels = set(predictions['gold']) | set(predictions['predicted'])
    if task != 'binary-attribute' or not labels <= {1, -1}:
        raise InvalidInputError(f'micro F1 needs a binary-attribute task, got {task!r}')
    counts = confusion_counts(predictions)
    return f1_score(counts['tp'], counts['fp'], counts['fn'])


@dataclass
class EvalReport:
    """Pooled evaluation results.

    Attributes:
        mode: 'sequential' or 'static'.
        task: task kind of the test data.
        groups: K of the evaluated model.
        predictions: one row per prediction, columns
            user, position (1-based), gold, predicted, correct, entropy.
    """
    mode: str
    task: str
    groups: int
    predictions: pd.DataFrame

    @property
    def binary(self):
        return self.task == 'binary-attribute'

    @property
    def accuracy(self):
        return float(self.predictions['correct'].mean())

    @property
    def confusion(self):
        return confusion_counts(self.predictions) if self.binary else None

    @property
    def micro_f1(self):
        return micro_f1(self.predictions, self.task) if self.binary else None

    def curves(self):
        rows = []
        for position, group in self.predictions.groupby('position', sort=True):
            n = len(group)
            hits = int(group['correct'].sum())
            low, high = proportion_confint(hits, n, alpha=0.05, method='wilson')
            f1 = micro_f1(group, self.task) if self.binary else float('nan')
            rows.append((int(position), hits / n, f1, float(group['entropy'].mean()), n,
                         float(low), float(high)))
        return pd.DataFrame(rows, columns=CURVE_COLUMNS)

    def summary(self):
        summary = {
            'mode': self.mode,
            'task': self.task,
            'groups': self.groups,
            'users': int(self.predictions['user'].nunique()),
            'observations': len(self.predictions),
            'accuracy': self.accuracy,
            'f1_averaging': 'pooled',
            'entropy_unit': 'nats',
        }
        if self.binary:
            summary['micro_f1'] = self.micro_f1
            summary['confusion'] = self.confusion
        return summary


def _check(test, m):
    if len(test) == 0:
        raise InvalidInputError('test set is empty')
    if test.feature_dim != m.feature_dim:
        raise InvalidInputError(
            f'test set has feature dimension {test.feature_dim} but model has {m.feature_dim}')


def evaluate_sequential(test, m):
    """Predict each observation from the user's posterior, then observe it."""
    _check(test, m)
    rows = []
    for user in test.users:
        session = AdaptationSession(m)
        for position, obs in enumerate(user.observations, start=1):
            guess = session.predict_id(obs.stimulus)
            rows.append((user.user_id, position, obs.observed, guess, guess == obs.observed,
                         session.entropy))
            session.observe(obs)
    return EvalReport('sequential', test.task, m.K, pd.DataFrame(rows, columns=PREDICTION_COLUMNS))


def evaluate_static(test, m):
    """Predict every observation from the prior mixture, never adapting."""
    _check(test, m)
    entropy = posterior_entropy(initial_state(m))
    rows = []
    for user in test.users:
        for position, obs in enumerate(user.observations, start=1):
            guess = predict(obs.stimulus, predict_new_user(obs.stimulus, m))
            rows.append((user.user_id, position, obs.observed, guess, guess == obs.observed, entropy))
    return EvalReport('static', test.task, m.K, pd.DataFrame(rows, columns=PREDICTION_COLUMNS))


def pool_reports(reports):
    """Pool the prediction logs of several folds into one report."""
    reports = list(reports)
    if not reports:
        raise InvalidInputError('no reports to pool')
    first = reports[0]
    for r in reports[1:]:
        if (r.mode, r.task, r.groups) != (first.mode, first.task, first.groups):
            raise InvalidInputError('cannot pool reports of different modes, tasks or group counts')
    frames = [r.predictions.assign(fold=i) for i, r in enumerate(reports)]
    return EvalReport(first.mode, first.task, first.groups, pd.concat(frames, ignore_index=True))


def write_report(report, out_dir, prefix='', predictions=True):
    """Write summary JSON, curves CSV and (optionally) the prediction log.

    Returns:
      dict of written paths by kind.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        'summary': out_dir / f'{prefix}summary.json',
        'curves': out_dir / f'{prefix}curves.csv',
    }
    with paths['summary'].open('w', encoding='utf-8') as f:
        json.dump(report.summary(), f, indent=2)
        f.write('\n')
    report.curves().to_csv(paths['curves'], index=False, lineterminator='\n')
    if predictions:
        paths['predictions'] = out_dir / f'{prefix}predictions.csv'
        report.predictions.to_csv(paths['predictions'], index=False, lineterminator='\n')
    logger.info('wrote %s report to %s', report.mode, out_dir)
    return paths
