"""Maximum a posteriori training of the user-group model with EM.

Group memberships of the training users are never observed. Each EM
iteration computes the posterior group probabilities of every user
(responsibilities) under the current parameters and then takes a few L-BFGS
steps on the expected complete-data log-likelihood plus Gaussian log-priors.

The parameter vector theta is laid out as ``[pi_1..pi_K, rho_1, ..., rho_K]``
(see ``ModelParams.to_vector``). Gaussian priors are centered at zero and the
sigmas are variances, so every scalar x contributes -x**2 / (2 sigma); the
normalizing constants of the Gaussians are dropped from every value reported
here.

  Typical usage example:
```
  result = em_fit(dataset, Hyperparams(K=3, seed=7))
  result.params.save('model.json')
  result.trace.to_csv('trace.csv', index=False)
```
"""

from dataclasses import asdict, dataclass, replace
import logging
import time

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax
import tqdm

from grouplm.exceptions import InvalidInputError, NumericalFailureError
from grouplm.mixture import ModelParams, log_group_prior
from grouplm.optimizer import OptimizerConfig, minimize

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['iteration', 'objective', 'max_abs_grad', 'seconds']
FULL_FIT_STEPS = 1000


@dataclass(frozen=True)
class Hyperparams:
    """Model size, priors and EM controls.

    Attributes:
        K: number of user groups.
        sigma_pi: prior variance of every pi_g.
        sigma_rho: prior variance of every entry of rho_g.
        em_max_iters: EM iteration cap.
        em_tol: stop when the relative change of the objective falls below this.
        inner_steps: L-BFGS steps per EM iteration.
        restarts: random restarts; the best final objective wins.
        seed: seed of the first restart, restart r uses seed + r.
        init_scale: rho_g entries start uniform in [-init_scale, init_scale].
        lbfgs_memory: curvature pairs kept by the inner optimizer.
    """
    K: int = 2
    sigma_pi: float = 0.3
    sigma_rho: float = 1.0
    em_max_iters: int = 200
    em_tol: float = 1e-6
    inner_steps: int = 5
    restarts: int = 5
    seed: int = 0
    init_scale: float = 0.1
    lbfgs_memory: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise InvalidInputError(f'K must be at least 1, got {self.K}')
        if not (self.sigma_pi > 0 and self.sigma_rho > 0):
            raise InvalidInputError(
                f'prior variances must be positive, got sigma_pi={self.sigma_pi}, sigma_rho={self.sigma_rho}')
        if self.em_max_iters < 1:
            raise InvalidInputError(f'em_max_iters must be at least 1, got {self.em_max_iters}')
        if self.em_tol < 0:
            raise InvalidInputError(f'em_tol must be non-negative, got {self.em_tol}')
        if self.inner_steps < 1:
            raise InvalidInputError(f'inner_steps must be at least 1, got {self.inner_steps}')
        if self.restarts < 1:
            raise InvalidInputError(f'restarts must be at least 1, got {self.restarts}')
        if self.init_scale < 0:
            raise InvalidInputError(f'init_scale must be non-negative, got {self.init_scale}')

    def optimizer_config(self, max_steps=None):
        return OptimizerConfig(memory=self.lbfgs_memory,
                               max_steps=self.inner_steps if max_steps is None else max_steps)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """Posterior group probabilities P(g | D^u; theta) of every user.

    Attributes:
        user_ids: users in dataset order.
        probs: (users x K) matrix, rows sum to one.
    """
    user_ids: tuple
    probs: np.ndarray


class PackedDataset(object):
    """A Dataset flattened for vectorized scoring.

    All candidate feature rows of all observations are stacked into one
    matrix; observations are contiguous segments of it and users are
    contiguous runs of observations.

    Attributes:
        features: (total candidates x n) matrix.
        offsets: first candidate row of every observation.
        sizes: candidate count of every observation.
        observed_rows: row of the observed candidate of every observation.
        obs_user: user index of every observation.
        user_offsets: first observation index of every user.
        user_ids: user ids in dataset order.
    """

    def __init__(self, d):
        blocks, offsets, sizes, observed, obs_user, user_offsets = [], [], [], [], [], []
        total = 0
        for u, user in enumerate(d.users):
            user_offsets.append(len(offsets))
            for obs in user.observations:
                blocks.append(obs.stimulus.features)
                offsets.append(total)
                sizes.append(len(obs.stimulus))
                observed.append(total + obs.position)
                obs_user.append(u)
                total += len(obs.stimulus)
        if not blocks:
            raise InvalidInputError('dataset has no observations')

        self.feature_dim = d.feature_dim
        self.features = np.vstack(blocks)
        self.offsets = np.array(offsets)
        self.sizes = np.array(sizes)
        self.observed_rows = np.array(observed)
        self.obs_user = np.array(obs_user)
        self.user_offsets = np.array(user_offsets)
        self.user_ids = tuple(d.user_ids)

    @property
    def num_users(self):
        return len(self.user_ids)


def pack(d):
    return d if isinstance(d, PackedDataset) else PackedDataset(d)


def _check_dims(packed, m):
    if packed.feature_dim != m.feature_dim:
        raise InvalidInputError(
            f'dataset has feature dimension {packed.feature_dim} but model has {m.feature_dim}')


def _group_log_probs(packed, group_weights):
    """Log-probabilities under every group.

    Returns:
      (observed, candidates): log P(b_d | s_d; rho_g) of the observed behavior,
      shape (observations x K), and P(b | s_d; rho_g) of every candidate row,
      shape (candidate rows x K).
    """
    z = packed.features @ group_weights.T
    top = np.maximum.reduceat(z, packed.offsets, axis=0)
    shifted = z - np.repeat(top, packed.sizes, axis=0)
    lse = top + np.log(np.add.reduceat(np.exp(shifted), packed.offsets, axis=0))
    log_p = z - np.repeat(lse, packed.sizes, axis=0)
    return log_p[packed.observed_rows], np.exp(log_p)


def per_user_group_loglik(d, m):
    """(users x K) matrix of sum_{d in D^u} log P(b_d | s_d; rho_g)."""
    packed = pack(d)
    _check_dims(packed, m)
    observed, _ = _group_log_probs(packed, m.group_weights)
    return np.add.reduceat(observed, packed.user_offsets, axis=0)


def log_prior(m, h):
    """Gaussian log-prior of theta without its normalizing constants."""
    return (-np.sum(m.pi ** 2) / (2 * h.sigma_pi)
            - np.sum(m.group_weights ** 2) / (2 * h.sigma_rho))


def log_posterior_objective(d, m, h):
    """Log-likelihood of the data with groups summed out, plus the log-prior.

    sum_u log sum_g P(g | pi) prod_d P(b_d | s_d; rho_g), with the sum over
    groups done by log-sum-exp.
    """
    joint = log_group_prior(m.pi) + per_user_group_loglik(d, m)
    return float(np.sum(logsumexp(joint, axis=1)) + log_prior(m, h))


def e_step(d, m):
    """Responsibilities of every user under the current parameters."""
    packed = pack(d)
    joint = log_group_prior(m.pi) + per_user_group_loglik(packed, m)
    return Responsibilities(packed.user_ids, softmax(joint, axis=1))


def lower_bound_and_grad(d, r, m, h):
    """Expected complete-data log-posterior and its gradient in theta.

    value = sum_u sum_g r_u(g) [log P(g | pi) + sum_d log P(b_d | s_d; rho_g)]
            + log-prior

    Returns:
      (value, gradient) with the gradient laid out like ``m.to_vector()``.

    Raises:
      InvalidInputError: if the responsibilities do not belong to ``d``'s users.
    """
    packed = pack(d)
    _check_dims(packed, m)
    probs = np.asarray(r.probs, dtype=float)
    if tuple(r.user_ids) != packed.user_ids or probs.shape != (packed.num_users, m.K):
        raise InvalidInputError(
            f'responsibilities for {len(r.user_ids)} users x {probs.shape[-1]} groups do not '
            f'align with {packed.num_users} users x {m.K} groups')

    observed, cand_probs = _group_log_probs(packed, m.group_weights)
    loglik = np.add.reduceat(observed, packed.user_offsets, axis=0)
    log_prior_g = log_group_prior(m.pi)
    value = float(np.sum(probs * (log_prior_g + loglik)) + log_prior(m, h))

    # weight of every observation (and of every candidate row) in every group
    w_obs = probs[packed.obs_user]
    w_rows = np.repeat(w_obs, packed.sizes, axis=0)
    grad_rho = (w_obs.T @ packed.features[packed.observed_rows]
                - (cand_probs * w_rows).T @ packed.features
                - m.group_weights / h.sigma_rho)
    grad_pi = (probs.sum(axis=0) - packed.num_users * np.exp(log_prior_g)
               - m.pi / h.sigma_pi)
    return value, np.concatenate([grad_pi, grad_rho.ravel()])


@dataclass
class FitResult:
    """Outcome of ``em_fit``.

    Attributes:
        params: ModelParams of the winning restart.
        objective: its final log_posterior_objective.
        trace: DataFrame (iteration, objective, max_abs_grad, seconds) of the
            winning restart; iteration 0 is the initialization.
        restarts: DataFrame with one row per restart
            (restart, seed, objective, iterations, converged).
    """
    params: ModelParams
    objective: float
    trace: pd.DataFrame
    restarts: pd.DataFrame


def _negated_bound(packed, r, h, K, feature_names):
    def f(theta):
        m = ModelParams.from_vector(theta, K, packed.feature_dim, feature_names)
        value, grad = lower_bound_and_grad(packed, r, m, h)
        return -value, -grad
    return f


def _is_finite(theta):
    return bool(np.all(np.isfinite(theta)))


def _run_em(packed, h, theta, feature_names, restart):
    n = packed.feature_dim
    # with one group the responsibilities never change, so the bound is the
    # objective itself and the inner loop is not truncated
    cfg = h.optimizer_config(max_steps=None if h.K > 1 else FULL_FIT_STEPS)
    start = time.perf_counter()

    m = ModelParams.from_vector(theta, h.K, n, feature_names)
    objective = log_posterior_objective(packed, m, h)
    if not np.isfinite(objective):
        raise NumericalFailureError('objective is not finite', 0, restart)
    rows = [(0, objective, float('nan'), time.perf_counter() - start)]
    converged = False

    for iteration in range(1, h.em_max_iters + 1):
        r = e_step(packed, m)
        try:
            result = minimize(_negated_bound(packed, r, h, h.K, feature_names), theta, cfg)
        except InvalidInputError:
            raise NumericalFailureError('lower bound is not finite', iteration, restart) from None
        if not _is_finite(result.x):
            raise NumericalFailureError('parameters are not finite', iteration, restart)

        theta = result.x
        m = ModelParams.from_vector(theta, h.K, n, feature_names)
        new_objective = log_posterior_objective(packed, m, h)
        if not np.isfinite(new_objective):
            raise NumericalFailureError('objective is not finite', iteration, restart)

        rows.append((iteration, new_objective, float(np.max(np.abs(result.grad))),
                     time.perf_counter() - start))
        logger.debug('restart %d iteration %d: objective %.10g', restart, iteration, new_objective)

        change = abs(new_objective - objective) / max(abs(objective), np.finfo(float).tiny)
        objective = new_objective
        if change < h.em_tol:
            converged = True
            break

    return m, objective, pd.DataFrame(rows, columns=TRACE_COLUMNS), converged


def initial_theta(h, feature_dim, seed):
    """pi = 0 and rho_g uniform in [-init_scale, init_scale]."""
    rng = np.random.default_rng(seed)
    rho = rng.uniform(-h.init_scale, h.init_scale, size=(h.K, feature_dim))
    return np.concatenate([np.zeros(h.K), rho.ravel()])


def em_fit(d, h, progress=False):
    """Train the user-group model by EM with random restarts.

    Args:
      d: training Dataset.
      h: Hyperparams.
      progress: show a tqdm bar over restarts.

    Returns:
      FitResult of the restart with the highest final objective (ties go to
      the lowest seed).

    Raises:
      InvalidInputError: on an empty dataset.
      NumericalFailureError: if the objective stops being finite.
    """
    if len(d) == 0:
        raise InvalidInputError('cannot train on an empty dataset')
    packed = pack(d)
    names = tuple(d.feature_names)

    best = None
    summaries = []
    restarts = range(h.restarts)
    iteration = restarts
    if progress and h.restarts > 1:
        iteration = tqdm.tqdm(restarts, desc=f'EM K={h.K}', disable=not logger.isEnabledFor(logging.INFO))
    for restart in iteration:
        seed = h.seed + restart
        theta = initial_theta(h, packed.feature_dim, seed)
        m, objective, trace, converged = _run_em(packed, h, theta, names, restart)
        summaries.append((restart, seed, objective, len(trace) - 1, converged))
        logger.info('restart %d (seed %d): objective %.10g after %d iterations%s',
                    restart, seed, objective, len(trace) - 1, '' if converged else ' (not converged)')
        if best is None or objective > best[1]:
            best = (m, objective, trace, restart, seed, converged)

    m, objective, trace, restart, seed, converged = best
    params = m.with_metadata(
        hyperparams=h.to_dict(), seed=seed, restart=restart, objective=objective,
        iterations=len(trace) - 1, converged=converged,
        num_users=len(d), num_observations=d.num_observations)
    summary = pd.DataFrame(summaries, columns=['restart', 'seed', 'objective', 'iterations', 'converged'])
    return FitResult(params, objective, trace, summary)


def fit_single(d, h, max_steps=FULL_FIT_STEPS):
    """Direct MAP fit of the basic model (one group), run to convergence.

    This is the group-free baseline; ``h.K`` is ignored.
    """
    if len(d) == 0:
        raise InvalidInputError('cannot train on an empty dataset')
    packed = pack(d)
    h = replace(h, K=1)
    r = Responsibilities(packed.user_ids, np.ones((packed.num_users, 1)))
    theta0 = np.zeros(1 + packed.feature_dim)
    result = minimize(_negated_bound(packed, r, h, 1, tuple(d.feature_names)), theta0,
                      h.optimizer_config(max_steps=max_steps))
    m = ModelParams.from_vector(result.x, 1, packed.feature_dim, tuple(d.feature_names))
    return m.with_metadata(hyperparams=h.to_dict(), objective=log_posterior_objective(packed, m, h),
                           iterations=result.n_steps, converged=result.converged)
