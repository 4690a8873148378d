"""
Matching gradient descent for the two-alternative choice model

    y_i1 = 1{x_i1' beta + e_i1 > x_i2' beta + e_i2}

Each round matches every observation to its nearest neighbours in the
alternative-2 index x_i2' beta, then moves beta along
-(gamma / n) sum_i sum_l W_il (y_l1 - y_i1) x_i1. Only the direction of
beta is identified, so after each step the iterate is rescaled to
|beta_1| = 1 with the sign of the initial guess.
"""
import logging
from dataclasses import dataclass

import numpy as np

import config
from errors import ContractViolation, DivergenceError, EstimationError
from matching import MatchingTermination, NeighborWeights, nearest_neighbors
from models import IterationTrace, frozen_array
from stage1 import GdConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ChoiceDataset:
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray

    def __post_init__(self):
        x1 = frozen_array(self.x1, ndim=2, name='x1')
        x2 = frozen_array(self.x2, ndim=2, name='x2')
        y1 = np.asarray(self.y1)
        if x1.shape != x2.shape:
            raise ContractViolation(f'x1 has shape {x1.shape}, x2 has shape {x2.shape}')
        if y1.shape != (x1.shape[0],):
            raise ContractViolation(f'y1 has shape {y1.shape}, expected ({x1.shape[0]},)')
        if not np.all((y1 == 0) | (y1 == 1)):
            raise ContractViolation('y1 must be binary')
        object.__setattr__(self, 'x1', x1)
        object.__setattr__(self, 'x2', x2)
        object.__setattr__(self, 'y1', frozen_array(y1, dtype=np.int8, name='y1'))

    @property
    def n(self):
        return self.x1.shape[0]

    @property
    def p(self):
        return self.x1.shape[1]

    def __repr__(self) -> str:
        return f'<ChoiceDataset n: {self.n} p: {self.p}>'


def choice_knn_weights(x2, beta_k, m=config.NEIGHBORS):
    x2 = np.asarray(x2, dtype=float)
    index = x2 @ np.asarray(beta_k, dtype=float)
    neighbors = nearest_neighbors(index, m)
    return NeighborWeights(x2.shape[0], np.arange(x2.shape[0]), neighbors)


def choice_update_step(data, beta_k, weights, gamma):
    y = data.y1.astype(float)
    gaps = weights.neighbor_mean(y) - y[weights.rows]
    return np.asarray(beta_k, dtype=float) - gamma / data.n * (gaps @ data.x1[weights.rows])


def normalize_first(beta, sign):
    scale = abs(beta[0])
    if not scale > 0:
        raise EstimationError('first coefficient reached zero; the scale normalization is undefined')
    beta = beta / scale
    beta[0] = sign
    return beta


def _initial_guess(gd, p):
    if gd.initial_guess is None:
        # zero cannot be normalized
        guess = np.zeros(p)
        guess[0] = 1.0
        return guess
    return gd.start(p)


def multinomial_estimate(data, gd=GdConfig(), term=MatchingTermination(), m=config.NEIGHBORS):
    beta = _initial_guess(gd, data.p)
    sign = 1.0 if beta[0] >= 0 else -1.0
    beta = normalize_first(beta, sign)
    monitor = term.monitor()
    monitor.update(beta)
    trace = IterationTrace()
    cap = min(gd.max_iterations, term.max_iterations)

    iteration = 0
    while iteration < cap:
        iteration += 1
        weights = choice_knn_weights(data.x2, beta, m)
        stepped = choice_update_step(data, beta, weights, gd.learning_rate)
        if not np.all(np.isfinite(stepped)):
            raise DivergenceError(f'choice estimator diverged at iteration {iteration}', trace)
        beta_next = normalize_first(stepped, sign)
        y = data.y1.astype(float)
        loss = float(np.mean((weights.neighbor_mean(y) - y) ** 2))
        trace.record(iteration, float(np.max(np.abs(beta_next - beta))), loss)
        beta = beta_next
        if monitor.update(beta):
            break
    else:
        log.warning('choice estimator hit the iteration cap (%d)', cap)

    log.info('choice estimator stopped after %d iterations', iteration)
    return beta
