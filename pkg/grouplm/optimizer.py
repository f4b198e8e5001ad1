"""Limited-memory BFGS minimization over value-and-gradient callbacks.

The search direction comes from the usual two-loop recursion over the last
``memory`` curvature pairs; step lengths come from scipy's strong-Wolfe line
search, with an Armijo backtracking fallback when that search gives up.
Training uses it as the truncated inner loop of EM: only a few steps per call.
"""

from collections import deque
from dataclasses import asdict, dataclass
import logging
import warnings

import numpy as np
import pandas as pd
from scipy.optimize import line_search

from grouplm.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['step', 'value', 'grad_norm', 'step_length']


@dataclass(frozen=True)
class OptimizerConfig:
    """Tuning constants of ``minimize``.

    Attributes:
        memory: number of stored curvature pairs.
        max_steps: iteration cap per call.
        c1: sufficient-decrease constant of the Wolfe conditions.
        c2: curvature constant of the Wolfe conditions.
        max_backtracks: line-search iteration cap.
        grad_tol: stop once the infinity norm of the gradient is below this.
        curvature_eps: pairs with s.y at or below this are skipped.
    """
    memory: int = 10
    max_steps: int = 100
    c1: float = 1e-4
    c2: float = 0.9
    max_backtracks: int = 50
    grad_tol: float = 1e-8
    curvature_eps: float = 1e-10

    def __post_init__(self):
        if self.memory < 1:
            raise InvalidInputError(f'memory must be at least 1, got {self.memory}')
        if self.max_steps < 0:
            raise InvalidInputError(f'max_steps must be non-negative, got {self.max_steps}')
        if not 0 < self.c1 < self.c2 < 1:
            raise InvalidInputError(f'need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}')
        if self.max_backtracks < 1:
            raise InvalidInputError(f'max_backtracks must be at least 1, got {self.max_backtracks}')
        if self.grad_tol < 0:
            raise InvalidInputError(f'grad_tol must be non-negative, got {self.grad_tol}')

    def to_dict(self):
        return asdict(self)


@dataclass
class OptimizeResult:
    """Outcome of one ``minimize`` call.

    Attributes:
        x: final iterate.
        fun: objective value at x.
        grad: gradient at x.
        n_steps: number of accepted iterations.
        n_evals: number of callback evaluations.
        converged: gradient norm fell below grad_tol.
        line_search_failed: the last line search found no acceptable step.
        trace: DataFrame with one row per accepted step
            (step, value, grad_norm, step_length); grad_norm is the infinity norm.
    """
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_steps: int
    n_evals: int
    converged: bool
    line_search_failed: bool
    trace: pd.DataFrame


class _CachedObjective(object):
    """Splits a value-and-gradient callback into the two callbacks scipy wants."""

    def __init__(self, f):
        self.f = f
        self.n_evals = 0
        self._x = None
        self._value = None
        self._grad = None

    def __call__(self, x):
        if self._x is None or not np.array_equal(x, self._x):
            value, grad = self.f(x)
            self.n_evals += 1
            self._x = np.array(x, dtype=float)
            self._value = float(value)
            self._grad = np.array(grad, dtype=float)
        return self._value, self._grad

    def value(self, x):
        return self(x)[0]

    def grad(self, x):
        return self(x)[1]


def two_loop(grad, s_hist, y_hist):
    """Apply the L-BFGS inverse-Hessian approximation to ``grad``.

    With an empty history this is the identity, so the first direction is
    the negative gradient.
    """
    q = np.array(grad, dtype=float)
    if not s_hist:
        return q

    rhos = [1.0 / (y @ s) for s, y in zip(s_hist, y_hist)]
    alphas = []
    for s, y, rho in reversed(list(zip(s_hist, y_hist, rhos))):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)

    s, y = s_hist[-1], y_hist[-1]
    r = q * ((s @ y) / (y @ y))

    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * (y @ r)
        r += s * (a - b)
    return r


def _backtrack(objective, x, fx, gx, d, cfg):
    slope = gx @ d
    alpha = 1.0
    for _ in range(cfg.max_backtracks):
        f_new = objective.value(x + alpha * d)
        if np.isfinite(f_new) and f_new <= fx + cfg.c1 * alpha * slope:
            return alpha
        alpha *= 0.5
    return None


def _search(objective, x, fx, gx, d, cfg):
    with warnings.catch_warnings():
        # LineSearchWarning is a RuntimeWarning
        warnings.simplefilter('ignore', RuntimeWarning)
        alpha = line_search(objective.value, objective.grad, x, d, gfk=gx, old_fval=fx,
                            c1=cfg.c1, c2=cfg.c2, maxiter=cfg.max_backtracks)[0]

    if alpha is not None:
        f_new = objective.value(x + alpha * d)
        if np.isfinite(f_new) and f_new <= fx:
            return alpha

    logger.debug('strong Wolfe search failed, backtracking')
    return _backtrack(objective, x, fx, gx, d, cfg)


def minimize(f, x0, cfg=None):
    """Minimize ``f`` with L-BFGS.

    Args:
      f: callback mapping x to (value, gradient).
      x0: starting point.
      cfg: OptimizerConfig, default constants if None.

    Returns:
      OptimizeResult. Accepted values never increase; if a line search fails
      the best iterate so far is returned with ``line_search_failed`` set.

    Raises:
      InvalidInputError: if f is not finite at x0.
    """
    cfg = cfg or OptimizerConfig()
    objective = _CachedObjective(f)

    x = np.array(x0, dtype=float)
    fx, gx = objective(x)
    if not (np.isfinite(fx) and np.all(np.isfinite(gx))):
        raise InvalidInputError(f'objective is not finite at the starting point (value {fx})')

    s_hist = deque(maxlen=cfg.memory)
    y_hist = deque(maxlen=cfg.memory)
    rows = []
    converged = False
    failed = False

    for step in range(1, cfg.max_steps + 1):
        if np.max(np.abs(gx), initial=0.0) <= cfg.grad_tol:
            converged = True
            break

        d = -two_loop(gx, s_hist, y_hist)
        if gx @ d >= 0:
            # not a descent direction: forget the history
            s_hist.clear()
            y_hist.clear()
            d = -gx

        alpha = _search(objective, x, fx, gx, d, cfg)
        if alpha is None:
            failed = True
            logger.debug('line search failed at step %d (value %.6g)', step, fx)
            break

        x_new = x + alpha * d
        f_new, g_new = objective(x_new)
        s, y = x_new - x, g_new - gx
        if s @ y > cfg.curvature_eps:
            s_hist.append(s)
            y_hist.append(y)

        x, fx, gx = x_new, f_new, g_new
        rows.append((step, fx, float(np.max(np.abs(gx), initial=0.0)), alpha))
    else:
        converged = np.max(np.abs(gx), initial=0.0) <= cfg.grad_tol

    return OptimizeResult(
        x=x, fun=fx, grad=gx, n_steps=len(rows), n_evals=objective.n_evals,
        converged=bool(converged), line_search_failed=failed,
        trace=pd.DataFrame(rows, columns=TRACE_COLUMNS),
    )
