"""Latent user groups on top of the basic log-linear model.

Every user belongs to one of K groups; group g has its own weight vector
rho_g and a-priori probability softmax(pi)_g. An unseen user is first
predicted with the prior mixture, then the group posterior is sharpened with
every observed (stimulus, behavior) pair of that user.

  Typical usage example:
```
  session = AdaptationSession(ModelParams.load('model.json'))
  for stimulus, observed in interactions:
      guess = session.predict_id(stimulus)
      session.observe(Observation(stimulus, observed))
  print(session.entropy)
```
"""

from dataclasses import dataclass, field
import json

import numpy as np
from scipy.special import entr, logsumexp, softmax

from grouplm import loglinear
from grouplm.exceptions import InvalidInputError, ModelFormatError

MODEL_FORMAT = 'grouplm-model'
MODEL_VERSION = 1


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Trained parameters theta = (pi, rho_1, ..., rho_K).

    Attributes:
        pi: group weight vector of length K.
        group_weights: (K x n) matrix, row g is rho_g.
        feature_names: names of the n features.
        metadata: free-form training information (hyper-parameters, seed, ...).
    """
    pi: np.ndarray
    group_weights: np.ndarray
    feature_names: tuple = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        weights = np.array(self.group_weights, dtype=float)
        if pi.ndim != 1 or pi.size == 0:
            raise InvalidInputError('pi must be a nonempty vector')
        if weights.ndim != 2 or weights.shape[0] != pi.size:
            raise InvalidInputError(
                f'group_weights must have one row per group: {pi.size} groups, shape {weights.shape}')
        if weights.shape[1] == 0:
            raise InvalidInputError('feature dimension must be at least 1')
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(weights))):
            raise InvalidInputError('model parameters must be finite')

        names = tuple(self.feature_names) or tuple(f'f{i}' for i in range(weights.shape[1]))
        if len(names) != weights.shape[1]:
            raise InvalidInputError(
                f'{len(names)} feature names given for feature dimension {weights.shape[1]}')

        pi.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, 'pi', pi)
        object.__setattr__(self, 'group_weights', weights)
        object.__setattr__(self, 'feature_names', names)
        object.__setattr__(self, 'metadata', dict(self.metadata))

    @property
    def K(self):
        return self.pi.size

    @property
    def feature_dim(self):
        return self.group_weights.shape[1]

    @property
    def prior_probs(self):
        return group_prior(self.pi)

    def dominant_group(self):
        """(index, prior probability) of the a-priori most probable group."""
        probs = self.prior_probs
        g = int(np.argmax(probs))
        return g, float(probs[g])

    def to_vector(self):
        """Flatten to [pi_1..pi_K, rho_1, ..., rho_K]."""
        return np.concatenate([self.pi, self.group_weights.ravel()])

    @classmethod
    def from_vector(cls, theta, K, feature_dim, feature_names=(), metadata=None):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (K + K * feature_dim,):
            raise InvalidInputError(
                f'parameter vector has length {theta.size}, expected {K + K * feature_dim}')
        return cls(theta[:K], theta[K:].reshape(K, feature_dim), feature_names, metadata or {})

    def with_metadata(self, **entries):
        metadata = dict(self.metadata)
        metadata.update(entries)
        return ModelParams(self.pi, self.group_weights, self.feature_names, metadata)

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (np.array_equal(self.pi, other.pi)
                and np.array_equal(self.group_weights, other.group_weights)
                and self.feature_names == other.feature_names
                and self.metadata == other.metadata)

    def to_dict(self):
        # float.hex keeps every bit of the weights
        return {
            'format': MODEL_FORMAT,
            'version': MODEL_VERSION,
            'groups': self.K,
            'feature_dim': self.feature_dim,
            'feature_names': list(self.feature_names),
            'pi': [float(v).hex() for v in self.pi],
            'group_weights': [[float(v).hex() for v in row] for row in self.group_weights],
            'metadata': self.metadata,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get('format') != MODEL_FORMAT:
            raise ModelFormatError(f'not a {MODEL_FORMAT} file (format={d.get("format")!r})')
        if d.get('version') != MODEL_VERSION:
            raise ModelFormatError(f'unsupported model version {d.get("version")!r}')
        try:
            pi = [float.fromhex(v) for v in d['pi']]
            weights = [[float.fromhex(v) for v in row] for row in d['group_weights']]
            model = cls(pi, weights, tuple(d['feature_names']), d.get('metadata', {}))
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f'malformed model file: {e}') from None
        if model.K != d.get('groups') or model.feature_dim != d.get('feature_dim'):
            raise ModelFormatError(
                f'header says K={d.get("groups")}, n={d.get("feature_dim")} '
                f'but parameters have K={model.K}, n={model.feature_dim}')
        return model

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write('\n')

    @classmethod
    def load(cls, path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                d = json.load(f)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f'{path}: not valid JSON ({e})') from None
        return cls.from_dict(d)


@dataclass(frozen=True, eq=False)
class PosteriorState:
    """Group posterior of one user after N observations.

    Attributes:
        probs: P_u(g) for every group.
        log_lik_per_group: running sum of log P(b_d | s_d; rho_g).
        num_observations: N = |D^u|.
    """
    probs: np.ndarray
    log_lik_per_group: np.ndarray
    num_observations: int = 0

    @property
    def K(self):
        return len(self.probs)


@dataclass(frozen=True)
class Observation:
    """A user's response ``observed`` to ``stimulus``."""
    stimulus: loglinear.Stimulus
    observed: int

    def __post_init__(self):
        self.stimulus.index_of(self.observed)
        object.__setattr__(self, 'observed', int(self.observed))

    @property
    def position(self):
        return self.stimulus.index_of(self.observed)


def log_group_prior(pi):
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 1 or pi.size == 0:
        raise InvalidInputError('pi must be a nonempty vector')
    if not np.all(np.isfinite(pi)):
        raise InvalidInputError('pi must be finite')
    return pi - logsumexp(pi)


def group_prior(pi):
    """P(g | pi) = softmax(pi)."""
    return np.exp(log_group_prior(pi))


def _check_dims(s, m):
    if s.feature_dim != m.feature_dim:
        raise InvalidInputError(
            f'stimulus has feature dimension {s.feature_dim} but model has {m.feature_dim}')


def _check_state(state, m):
    if state.K != m.K:
        raise InvalidInputError(f'posterior state has {state.K} groups but model has {m.K}')


def log_group_distributions(s, m):
    """(K x candidates) matrix of log P(b | s; rho_g)."""
    _check_dims(s, m)
    z = m.group_weights @ s.features.T
    return z - logsumexp(z, axis=1, keepdims=True)


def group_distributions(s, m):
    """(K x candidates) matrix of P(b | s; rho_g)."""
    return np.exp(log_group_distributions(s, m))


def predict_new_user(s, m):
    """Prior mixture sum_g P(b | s; rho_g) P(g | pi) for a user with no history."""
    return m.prior_probs @ group_distributions(s, m)


def initial_state(m):
    """Posterior of a user before the first interaction."""
    return PosteriorState(m.prior_probs, np.zeros(m.K), 0)


def posterior_update(state, obs, m):
    """Add one observation to a user's posterior.

    The per-group log-likelihoods are accumulated and the posterior is
    renormalized from them in log space, so the result does not depend on
    the order in which observations arrive.
    """
    _check_state(state, m)
    log_p = log_group_distributions(obs.stimulus, m)[:, obs.position]
    log_lik = state.log_lik_per_group + log_p
    probs = softmax(log_group_prior(m.pi) + log_lik)
    return PosteriorState(probs, log_lik, state.num_observations + 1)


def predict_adapted(s, state, m):
    """Posterior mixture sum_g P(b | s; rho_g) P_u(g)."""
    _check_state(state, m)
    return state.probs @ group_distributions(s, m)


def posterior_entropy(state):
    """Shannon entropy of the group posterior in nats."""
    # abs() turns the -0.0 of a point mass into 0.0
    return abs(float(np.sum(entr(state.probs))))


class AdaptationSession(object):
    """Online adaptation to one user.

    Keeps the user's PosteriorState and replaces it after every observation.
    One session belongs to one user; sessions of different users are
    independent.

    Attributes:
        model: the trained ModelParams.
        state: current PosteriorState.
        history: observations seen so far, in order.
    """

    def __init__(self, model):
        self.model = model
        self.state = initial_state(model)
        self.history = []

    def predict(self, stimulus):
        return predict_adapted(stimulus, self.state, self.model)

    def predict_id(self, stimulus):
        return loglinear.predict(stimulus, self.predict(stimulus))

    def observe(self, obs):
        self.state = posterior_update(self.state, obs, self.model)
        self.history.append(obs)
        return self.state

    @property
    def entropy(self):
        return posterior_entropy(self.state)

    @property
    def group_probs(self):
        return self.state.probs
