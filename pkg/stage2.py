import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

import config
from basis import (BasisKind, IndexRescale, SieveBasis, select_order_aic,
                   sieve_ols_fit, tensor_bivariate)
from errors import (ContractViolation, DivergenceError, InsufficientDataError,
                    SingularityError)
from matching import MatchingTermination, knn_weights
from models import IterationTrace, index_pairs, outcome_index, selection_index
from stage1 import GdConfig

log = logging.getLogger(__name__)


class SecondStageMethod(Enum):
    MATCHING = 'matching'
    SIEVE = 'sieve'


@dataclass(frozen=True, eq=False)
class SecondStageFit:
    beta: np.ndarray
    method: SecondStageMethod
    g_coefficients: object
    trace: IterationTrace
    iterations: int
    converged: bool

    def __post_init__(self):
        if self.method is SecondStageMethod.SIEVE and self.g_coefficients is None:
            raise ContractViolation('a sieve second stage must carry its G coefficients')
        if not np.all(np.isfinite(self.beta)):
            raise ContractViolation('beta must be finite')

    def to_dico(self):
        return {
            "method": self.method.value,
            "beta": self.beta.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def __repr__(self) -> str:
        return (f'<SecondStageFit method: {self.method.value} beta: {np.round(self.beta, 4)} '
                f'iterations: {self.iterations} converged: {self.converged}>')


def _delta(first_stage):
    # a bare coefficient vector stands in for a fit (oracle delta)
    return np.asarray(getattr(first_stage, 'delta', first_stage), dtype=float)


def _z_hat(dataset, first_stage):
    return selection_index(dataset, _delta(first_stage))


def _selected_count(dataset, minimum=1):
    if dataset.s_n < minimum:
        raise InsufficientDataError(
            f'second stage needs at least {minimum} selected observations, got {dataset.s_n}')
    return dataset.s_n


#----------------------------------------------------------------------------#
# Matching.
#----------------------------------------------------------------------------#

def matching_update_step(dataset, beta_k, weights, gamma):
    beta_k = np.asarray(beta_k, dtype=float)
    if weights.n != dataset.n:
        raise ContractViolation(f'weights cover {weights.n} observations, dataset has {dataset.n}')
    if not np.all(dataset.selected[weights.rows]):
        raise ContractViolation('weights attach rows outside the selected set')
    y = dataset.y_filled()
    rows = weights.rows
    gaps = weights.neighbor_mean(y) - y[rows]
    return beta_k - gamma / dataset.s_n * (gaps @ dataset.X[rows])


def _matching_loss(dataset, weights):
    y = dataset.y_filled()
    return float(np.mean((weights.neighbor_mean(y) - y[weights.rows]) ** 2))


def matching_estimate(dataset, first_stage, gd=GdConfig(), term=MatchingTermination(),
                      m=config.NEIGHBORS):
    _selected_count(dataset, 2)
    delta = _delta(first_stage)
    beta = gd.start(dataset.p_x)
    monitor = term.monitor()
    monitor.update(beta)
    trace = IterationTrace()
    cap = min(gd.max_iterations, term.max_iterations)
    log.info('matching second stage: s_n=%d m=%d T=%d', dataset.s_n, m, term.stability_rounds)

    iteration = 0
    stable = False
    while iteration < cap:
        iteration += 1
        weights = knn_weights(index_pairs(dataset, delta, beta), dataset.selected, m)
        beta_next = matching_update_step(dataset, beta, weights, gd.learning_rate)
        change = float(np.max(np.abs(beta_next - beta))) if beta.size else 0.0
        loss = _matching_loss(dataset, weights)
        trace.record(iteration, change, loss)
        if not np.all(np.isfinite(beta_next)):
            raise DivergenceError(f'matching second stage diverged at iteration {iteration}', trace)
        beta = beta_next
        if monitor.update(beta):
            stable = True
            break

    trace.record(iteration, change, loss, force=True)
    if not stable:
        log.warning('matching second stage hit the iteration cap (%d)', cap)
    return SecondStageFit(beta, SecondStageMethod.MATCHING, None, trace, iteration, stable)


#----------------------------------------------------------------------------#
# Sieve.
#----------------------------------------------------------------------------#

def fit_G_sieve(dataset, z_hat, beta_k, q, ridge=config.RIDGE):
    """Tensor-sieve OLS of D * Y on the rescaled index pair, selected rows only."""
    _selected_count(dataset)
    z_hat = np.asarray(z_hat, dtype=float)
    x_index = outcome_index(dataset, beta_k)
    selected = dataset.selected
    z_map = IndexRescale.fit(z_hat[selected])
    x_map = IndexRescale.fit(x_index[selected])
    rows = tensor_bivariate(z_map(z_hat), x_map(x_index), q)
    responses = dataset.D * dataset.y_filled()
    fit = sieve_ols_fit(rows, responses, mask=selected, ridge=ridge,
                        basis=SieveBasis(q, BasisKind.TENSOR))
    return fit.with_rescale(z_map, x_map)


def bgd_update_step(dataset, z_index, beta_k, G, gamma):
    """beta_k - gamma / S_n * sum_i D_i (G(z_i, x_i(beta_k)) - Y_i) X_i for any G."""
    s_n = _selected_count(dataset)
    beta_k = np.asarray(beta_k, dtype=float)
    selected = dataset.selected
    z_index = np.asarray(z_index, dtype=float)[selected]
    x_index = outcome_index(dataset, beta_k)[selected]
    residual = np.asarray(G(z_index, x_index), dtype=float) - dataset.y_filled()[selected]
    return beta_k - gamma / s_n * (residual @ dataset.X[selected])


def _sieve_loss(dataset, z_hat, beta, g_hat):
    selected = dataset.selected
    fitted = g_hat.evaluate(np.asarray(z_hat)[selected], outcome_index(dataset, beta)[selected])
    return float(np.mean((fitted - dataset.y_filled()[selected]) ** 2))


def sieve_update_step(dataset, z_hat, beta_k, g_hat, gamma):
    if g_hat.basis is None or g_hat.basis.kind is not BasisKind.TENSOR:
        raise ContractViolation('the G sieve must be on a tensor basis')
    return bgd_update_step(dataset, z_hat, beta_k, g_hat.evaluate, gamma)


def _outcome_fitted(dataset, z_hat, beta, q, ridge):
    g_hat = fit_G_sieve(dataset, z_hat, beta, q, ridge)
    return g_hat.evaluate(z_hat, outcome_index(dataset, beta))


def second_stage_order(dataset, z_hat, beta, q='auto', ridge=config.RIDGE,
                       candidates=config.SECOND_STAGE_ORDERS):
    if q != 'auto':
        return int(q)
    q = select_order_aic(dataset, lambda q: _outcome_fitted(dataset, z_hat, beta, q, ridge),
                         candidates, dataset.s_n, equation='outcome', kind=BasisKind.TENSOR)
    log.info('second-stage sieve order %d chosen by AIC', q)
    return q


def sieve_estimate(dataset, first_stage, gd=GdConfig(), q=None):
    _selected_count(dataset)
    z_hat = _z_hat(dataset, first_stage)
    beta = gd.start(dataset.p_x)
    q = second_stage_order(dataset, z_hat, beta, gd.sieve_order if q is None else q, gd.ridge)
    trace = IterationTrace()
    log.info('sieve second stage: s_n=%d q=%d gamma=%g', dataset.s_n, q, gd.learning_rate)

    converged = False
    iteration = 0
    g_hat = None
    while iteration < gd.max_iterations:
        iteration += 1
        try:
            g_hat = fit_G_sieve(dataset, z_hat, beta, q, gd.ridge)
        except SingularityError as err:
            raise SingularityError(str(err), err.dimension, err.rank, trace) from err
        beta_next = sieve_update_step(dataset, z_hat, beta, g_hat, gd.learning_rate)
        change = float(np.max(np.abs(beta_next - beta))) if beta.size else 0.0
        loss = _sieve_loss(dataset, z_hat, beta, g_hat)
        trace.record(iteration, change, loss)
        if not np.all(np.isfinite(beta_next)):
            raise DivergenceError(f'sieve second stage diverged at iteration {iteration}', trace)
        beta = beta_next
        if change < gd.tolerance:
            converged = True
            break

    trace.record(iteration, change, loss, force=True)
    if not converged:
        log.warning('sieve second stage hit the iteration cap (%d) without converging',
                    gd.max_iterations)
    return SecondStageFit(beta, SecondStageMethod.SIEVE, g_hat, trace, iteration, converged)
