"""Datasets of user interactions: file format, validation, folds, synthesis.

A dataset file is JSON Lines. The first line is a header

    {"schema_version": 1, "feature_dim": 3, "feature_names": [...], "task": "multiclass"}

and every following line is one observation

    {"user": "u07", "seq": 3, "observed": 2,
     "candidates": [{"id": 0, "features": [0.1, 0.0, 1.0]},
                    {"id": 2, "features": "0:0.7 2:-1"}]}

Features are either a dense list or sparse "index:value" pairs. Records of a
``binary-attribute`` task may instead carry ``"attr_features": [...]`` and
``"use": true|false``, which is expanded into the two-candidate encoding.
See FORMATS.md for the full description.
"""

from dataclasses import asdict, dataclass
import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from grouplm.exceptions import DatasetLoadError, InvalidInputError
from grouplm.loglinear import Stimulus, encode_binary
from grouplm.mixture import Observation

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TASKS = ('multiclass', 'binary-attribute')


@dataclass(frozen=True)
class UserRecord:
    """The ordered interaction history D^u of one user."""
    user_id: str
    observations: tuple

    def __len__(self):
        return len(self.observations)


@dataclass(frozen=True)
class Dataset:
    """A corpus of user histories sharing one feature space.

    Attributes:
        users: tuple of UserRecord with unique ids.
        feature_dim: n.
        feature_names: names of the n features.
        task: 'multiclass' or 'binary-attribute'.
    """
    users: tuple
    feature_dim: int
    feature_names: tuple = ()
    task: str = 'multiclass'

    def __post_init__(self):
        object.__setattr__(self, 'users', tuple(self.users))
        names = tuple(self.feature_names) or tuple(f'f{i}' for i in range(self.feature_dim))
        object.__setattr__(self, 'feature_names', names)

        if self.feature_dim < 1:
            raise InvalidInputError(f'feature_dim must be at least 1, got {self.feature_dim}')
        if len(names) != self.feature_dim:
            raise InvalidInputError(
                f'{len(names)} feature names given for feature dimension {self.feature_dim}')
        if self.task not in TASKS:
            raise InvalidInputError(f'unknown task {self.task!r}, expected one of {TASKS}')

        seen = set()
        for user in self.users:
            if user.user_id in seen:
                raise InvalidInputError(f'duplicate user id {user.user_id!r}')
            seen.add(user.user_id)
            if not user.observations:
                raise InvalidInputError(f'user {user.user_id!r} has no observations')
            for obs in user.observations:
                if obs.stimulus.feature_dim != self.feature_dim:
                    raise InvalidInputError(
                        f'user {user.user_id!r}: stimulus has feature dimension '
                        f'{obs.stimulus.feature_dim} but dataset has {self.feature_dim}')

    def __len__(self):
        return len(self.users)

    @property
    def user_ids(self):
        return [u.user_id for u in self.users]

    @property
    def num_observations(self):
        return sum(len(u) for u in self.users)

    @property
    def max_length(self):
        return max((len(u) for u in self.users), default=0)

    def subset(self, user_ids):
        """Dataset restricted to ``user_ids``, keeping this dataset's user order."""
        wanted = set(user_ids)
        missing = wanted - set(self.user_ids)
        if missing:
            raise InvalidInputError(f'unknown user ids: {sorted(missing)}')
        users = [u for u in self.users if u.user_id in wanted]
        return Dataset(users, self.feature_dim, self.feature_names, self.task)


def _parse_features(raw, feature_dim):
    if isinstance(raw, str):
        dense = np.zeros(feature_dim)
        for pair in raw.split():
            index, sep, value = pair.partition(':')
            if not sep:
                raise ValueError(f'sparse feature {pair!r} is not "index:value"')
            index = int(index)
            if not 0 <= index < feature_dim:
                raise ValueError(f'feature index {index} outside [0, {feature_dim})')
            dense[index] = float(value)
        return dense
    if isinstance(raw, dict):
        return _parse_features(' '.join(f'{k}:{v}' for k, v in raw.items()), feature_dim)
    dense = np.array(raw, dtype=float)
    if dense.shape != (feature_dim,):
        raise ValueError(f'dense feature vector has length {dense.size}, expected {feature_dim}')
    return dense


def _parse_header(line):
    try:
        header = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetLoadError(0, f'header is not valid JSON ({e.msg})') from None
    if not isinstance(header, dict):
        raise DatasetLoadError(0, 'header must be a JSON object')
    if header.get('schema_version') != SCHEMA_VERSION:
        raise DatasetLoadError(0, f'unsupported schema_version {header.get("schema_version")!r}')
    feature_dim = header.get('feature_dim')
    if not isinstance(feature_dim, int) or feature_dim < 1:
        raise DatasetLoadError(0, f'feature_dim must be a positive integer, got {feature_dim!r}')
    names = header.get('feature_names') or [f'f{i}' for i in range(feature_dim)]
    if len(names) != feature_dim:
        raise DatasetLoadError(0, f'{len(names)} feature names for feature_dim {feature_dim}')
    task = header.get('task', 'multiclass')
    if task not in TASKS:
        raise DatasetLoadError(0, f'unknown task {task!r}')
    return feature_dim, tuple(names), task


def _parse_record(record, feature_dim, task):
    """Turn one decoded record into (user, seq, Observation); raises ValueError."""
    for key in ('user', 'seq'):
        if key not in record:
            raise ValueError(f'missing field "{key}"')
    seq = record['seq']
    if not isinstance(seq, int) or isinstance(seq, bool):
        raise ValueError(f'sequence number must be an integer, got {seq!r}')

    if 'attr_features' in record:
        if task != 'binary-attribute':
            raise ValueError('"attr_features" records need task "binary-attribute"')
        use = record.get('use')
        if not isinstance(use, bool):
            raise ValueError(f'"use" must be true or false, got {use!r}')
        stimulus, observed = encode_binary(_parse_features(record['attr_features'], feature_dim), use)
        return str(record['user']), seq, Observation(stimulus, observed)

    if 'candidates' not in record or 'observed' not in record:
        raise ValueError('record needs "candidates" and "observed"')
    candidates = record['candidates']
    if len(candidates) < 2:
        raise ValueError(f'stimulus needs at least two candidates, got {len(candidates)}')
    ids = [c['id'] for c in candidates]
    if any(not isinstance(i, int) or isinstance(i, bool) for i in ids):
        raise ValueError(f'candidate ids must be integers, got {ids}')
    if len(set(ids)) != len(ids):
        raise ValueError(f'candidate ids are not distinct: {ids}')
    if record['observed'] not in ids:
        raise ValueError(f'observed id {record["observed"]!r} absent from candidates {ids}')
    if task == 'binary-attribute' and sorted(ids) != [-1, 1]:
        raise ValueError(f'binary-attribute stimuli need candidate ids +1 and -1, got {ids}')

    features = [_parse_features(c['features'], feature_dim) for c in candidates]
    stimulus = Stimulus(ids, features)
    return str(record['user']), seq, Observation(stimulus, record['observed'])


def load(path):
    """Read and validate a dataset file.

    Within each user, observations are ordered by sequence number; users keep
    the order of their first appearance in the file.

    Raises:
      DatasetLoadError: naming the record and the violated rule.
    """
    path = Path(path)
    with path.open('r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].strip():
        raise DatasetLoadError(0, 'missing header line')

    feature_dim, names, task = _parse_header(lines[0])

    histories = {}
    last_seq = {}
    for number, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError('record must be a JSON object')
            user, seq, obs = _parse_record(record, feature_dim, task)
        except (ValueError, TypeError, KeyError, InvalidInputError) as e:
            rule = e.msg if isinstance(e, json.JSONDecodeError) else str(e)
            raise DatasetLoadError(number, rule) from None

        if user in last_seq and seq <= last_seq[user]:
            raise DatasetLoadError(
                number, f'sequence number {seq} of user {user!r} does not increase (previous {last_seq[user]})')
        last_seq[user] = seq
        histories.setdefault(user, []).append(obs)

    users = [UserRecord(user, tuple(obs)) for user, obs in histories.items()]
    dataset = Dataset(users, feature_dim, names, task)
    logger.info('loaded %s: %d users, %d observations', path, len(dataset), dataset.num_observations)
    return dataset


def _dumps(obj):
    return json.dumps(obj, ensure_ascii=False)


def save(d, path):
    """Write ``d`` in the dataset file format; floats keep full precision."""
    header = {
        'schema_version': SCHEMA_VERSION,
        'feature_dim': d.feature_dim,
        'feature_names': list(d.feature_names),
        'task': d.task,
    }
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(_dumps(header) + '\n')
        for user in d.users:
            for seq, obs in enumerate(user.observations):
                record = {
                    'user': user.user_id,
                    'seq': seq,
                    'observed': obs.observed,
                    'candidates': [{'id': c.id, 'features': c.features.tolist()}
                                   for c in obs.stimulus.candidates],
                }
                f.write(_dumps(record) + '\n')


def split_user_folds(d, folds, seed=0):
    """User-disjoint cross-validation splits.

    Users are shuffled with ``seed`` and dealt into ``folds`` groups whose
    sizes differ by at most one.

    Returns:
      list of (train, test) Dataset pairs, one per fold.
    """
    if not isinstance(folds, (int, np.integer)) or folds < 2:
        raise InvalidInputError(f'need at least 2 folds, got {folds!r}')
    if folds > len(d):
        raise InvalidInputError(f'cannot split {len(d)} users into {folds} folds')

    order = np.random.default_rng(seed).permutation(len(d))
    ids = d.user_ids
    pairs = []
    for part in np.array_split(order, folds):
        test_ids = {ids[i] for i in part}
        train_ids = [u for u in ids if u not in test_ids]
        pairs.append((d.subset(train_ids), d.subset(test_ids)))
    return pairs


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings of the salience dataset generator.

    Attributes:
        num_users: number of users.
        obs_per_user: scenes shown to every user.
        candidates_per_scene: candidate referents per scene.
        fraction_max_group: share of users who pick the most salient candidate;
            the others pick the least salient one.
        noise_rate: probability of replacing the rule's choice by a uniformly
            random candidate.
        distractor_features: number of uninformative uniform(0, 1) features.
        seed: random seed.
    """
    num_users: int = 100
    obs_per_user: int = 10
    candidates_per_scene: int = 5
    fraction_max_group: float = 0.5
    noise_rate: float = 0.0
    distractor_features: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1:
            raise InvalidInputError(f'num_users must be at least 1, got {self.num_users}')
        if self.obs_per_user < 1:
            raise InvalidInputError(f'obs_per_user must be at least 1, got {self.obs_per_user}')
        if self.candidates_per_scene < 2:
            raise InvalidInputError(
                f'candidates_per_scene must be at least 2, got {self.candidates_per_scene}')
        if not 0.0 <= self.fraction_max_group <= 1.0:
            raise InvalidInputError(
                f'fraction_max_group must lie in [0, 1], got {self.fraction_max_group}')
        share = self.num_users * self.fraction_max_group
        if not math.isclose(share, round(share), abs_tol=1e-9):
            raise InvalidInputError(
                f'num_users * fraction_max_group must be an integer, got {share}')
        if not 0.0 <= self.noise_rate < 1.0:
            raise InvalidInputError(f'noise_rate must lie in [0, 1), got {self.noise_rate}')
        if self.distractor_features < 0:
            raise InvalidInputError(
                f'distractor_features must be non-negative, got {self.distractor_features}')

    @property
    def num_max_users(self):
        return math.ceil(round(self.num_users * self.fraction_max_group, 9))

    @property
    def feature_names(self):
        return ('salience',) + tuple(f'distractor_{i + 1}' for i in range(self.distractor_features))

    def user_ids(self):
        width = len(str(self.num_users - 1))
        return [f'u{i:0{width}d}' for i in range(self.num_users)]

    def to_dict(self):
        return asdict(self)


def synthetic_truth(cfg):
    """Generating rule ('max' or 'min') of every synthetic user."""
    return {user: ('max' if i < cfg.num_max_users else 'min')
            for i, user in enumerate(cfg.user_ids())}


def _salience_scene(rng, cfg):
    size = cfg.candidates_per_scene
    salience = rng.random(size)
    while np.unique(salience).size < size:
        salience = rng.random(size)
    distractors = rng.random((size, cfg.distractor_features))
    return salience, np.column_stack([salience, distractors])


def generate_synthetic(cfg):
    """Procedural salience dataset with two clearly separated user groups.

    Every scene has ``candidates_per_scene`` candidates with a salience feature
    and ``distractor_features`` noise features. Users of the max group pick
    the most salient candidate, the others the least salient one; with
    probability ``noise_rate`` the pick is replaced by a random candidate.
    """
    rng = np.random.default_rng(cfg.seed)
    truth = synthetic_truth(cfg)
    ids = list(range(cfg.candidates_per_scene))

    users = []
    for user in cfg.user_ids():
        observations = []
        for _ in range(cfg.obs_per_user):
            salience, features = _salience_scene(rng, cfg)
            target = int(np.argmax(salience) if truth[user] == 'max' else np.argmin(salience))
            if cfg.noise_rate > 0 and rng.random() < cfg.noise_rate:
                target = int(rng.integers(cfg.candidates_per_scene))
            observations.append(Observation(Stimulus(ids, features), target))
        users.append(UserRecord(user, tuple(observations)))

    return Dataset(users, 1 + cfg.distractor_features, cfg.feature_names, 'multiclass')


def truth_path(dataset_path):
    """Sidecar path of a dataset: same directory, suffix '.truth'."""
    return Path(dataset_path).with_suffix('.truth')


def write_truth(labels, path):
    frame = pd.DataFrame({'user': list(labels.keys()), 'group': list(labels.values())})
    frame.to_csv(path, index=False, lineterminator='\n')


def read_truth(path):
    frame = pd.read_csv(path, dtype=str)
    return dict(zip(frame['user'], frame['group']))
