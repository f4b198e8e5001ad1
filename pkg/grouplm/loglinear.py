"""The basic log-linear behavior model.

A user who is shown a stimulus ``s`` picks one behavior ``b`` from a finite
set of candidates; each candidate carries a feature vector ``phi(b, s)`` and

    P(b | s; w) = exp(w . phi(b, s)) / sum_b' exp(w . phi(b', s))

  Typical usage example:
```
  s = Stimulus([0, 1, 2], [[1., 0.], [0., 1.], [.5, .5]])
  p = distribution(s, np.array([0.3, -0.2]))
  best = predict(s, p)
```
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from grouplm.exceptions import InvalidInputError


@dataclass(frozen=True, eq=False)
class Candidate:
    """One possible behavior of a stimulus.

    Attributes:
        id: integer behavior label, unique within its stimulus.
        features: real vector phi(b, s).
    """
    id: int
    features: np.ndarray


class Stimulus(object):
    """An ordered set of at least two featurized candidate behaviors.

    Attributes:
        ids: tuple of candidate ids in candidate order.
        features: read-only (num_candidates x feature_dim) matrix.
    """

    __slots__ = ('ids', 'features', '_positions')

    def __init__(self, ids, features):
        features = np.array(features, dtype=float)
        if features.ndim != 2:
            raise InvalidInputError('stimulus features must be a (candidates x features) matrix')

        ids = tuple(int(i) for i in ids)
        if len(ids) != features.shape[0]:
            raise InvalidInputError(
                f'{len(ids)} candidate ids given for {features.shape[0]} feature rows')
        if len(ids) < 2:
            raise InvalidInputError(f'a stimulus needs at least two candidates, got {len(ids)}')
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f'candidate ids are not distinct: {list(ids)}')
        if not np.all(np.isfinite(features)):
            raise InvalidInputError('candidate features must be finite')

        features.setflags(write=False)
        self.ids = ids
        self.features = features
        self._positions = {cid: pos for pos, cid in enumerate(ids)}

    @classmethod
    def from_candidates(cls, candidates):
        """Build a stimulus from a list of ``Candidate``."""
        candidates = list(candidates)
        if not candidates:
            raise InvalidInputError('a stimulus needs at least two candidates, got 0')
        lengths = {len(c.features) for c in candidates}
        if len(lengths) != 1:
            raise InvalidInputError(f'candidates disagree on feature dimension: {sorted(lengths)}')
        return cls([c.id for c in candidates], [c.features for c in candidates])

    @property
    def candidates(self):
        return [Candidate(cid, row) for cid, row in zip(self.ids, self.features)]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def __len__(self):
        return len(self.ids)

    def index_of(self, candidate_id):
        """Position of ``candidate_id`` in the candidate list."""
        try:
            return self._positions[int(candidate_id)]
        except (KeyError, TypeError, ValueError):
            raise InvalidInputError(
                f'unknown candidate id {candidate_id!r}; stimulus has {list(self.ids)}') from None

    def __eq__(self, other):
        if not isinstance(other, Stimulus):
            return NotImplemented
        return self.ids == other.ids and np.array_equal(self.features, other.features)

    def __repr__(self):
        return f'Stimulus(ids={list(self.ids)}, feature_dim={self.feature_dim})'


def as_weights(w, feature_dim=None):
    """Validate a weight vector and return it as a float array.

    Args:
      w: array-like of length n.
      feature_dim: expected dimension, or None to skip the check.

    Raises:
      InvalidInputError: if w is not a finite vector of the expected length.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise InvalidInputError(f'weight vector must be one-dimensional, got shape {w.shape}')
    if feature_dim is not None and len(w) != feature_dim:
        raise InvalidInputError(
            f'weight vector has dimension {len(w)} but stimulus features have dimension {feature_dim}')
    if not np.all(np.isfinite(w)):
        raise InvalidInputError('weight vector contains non-finite entries')
    return w


def scores(s, w):
    """Unnormalized scores w . phi(b, s) for every candidate."""
    w = as_weights(w, s.feature_dim)
    return s.features @ w


def log_distribution(s, w):
    """log P(b | s; w) for every candidate of ``s``, in candidate order."""
    z = scores(s, w)
    return z - logsumexp(z)


def distribution(s, w):
    """P(b | s; w) for every candidate of ``s``."""
    return np.exp(log_distribution(s, w))


def predict(s, dist):
    """Id of the most probable candidate; ties go to the earliest candidate."""
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (len(s),):
        raise InvalidInputError(
            f'distribution has {dist.size} entries but stimulus has {len(s)} candidates')
    # np.argmax returns the first maximal position
    return s.ids[int(np.argmax(dist))]


def grad_log_prob(s, observed, w):
    """Gradient of log P(observed | s; w) with respect to w.

    Equals phi(observed, s) - E_{b ~ P(.|s;w)}[phi(b, s)].
    """
    pos = s.index_of(observed)
    p = distribution(s, w)
    return s.features[pos] - p @ s.features


def encode_binary(attr_features, use_attribute):
    """Encode a use / don't-use attribute decision as a two-candidate stimulus.

    Candidate +1 carries phi'(a, c), candidate -1 carries -phi'(a, c), so that
    the feature function is b * phi'(a, c).

    Args:
      attr_features: context feature vector phi'(a, c).
      use_attribute: whether the attribute was used.

    Returns:
      (Stimulus, observed id) where the observed id is +1 or -1.
    """
    phi = np.asarray(attr_features, dtype=float)
    if phi.ndim != 1 or phi.size == 0:
        raise InvalidInputError('attribute features must be a nonempty vector')
    stimulus = Stimulus((1, -1), np.vstack([phi, -phi]))
    return stimulus, (1 if use_attribute else -1)
