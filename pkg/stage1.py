"""
First-stage estimation of the selection coefficients delta and the CDF F_U.

Sieve batched gradient descent alternates two steps until the largest
coordinate change drops below the tolerance:

    pi^{k+1}    = OLS of D on the Legendre sieve of the rescaled index z0 + Z delta^k
    delta^{k+1} = delta^k - gamma / n * sum_i (F^{k+1}(index_i) - D_i) Z_i

The matching variant replaces the sieve fit by the average of D over the
nearest neighbours in the selection index.
"""
import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

import config
from basis import (BasisKind, IndexRescale, SieveBasis, legendre_univariate,
                   select_order_aic, sieve_ols_fit)
from errors import ContractViolation, DivergenceError
from matching import MatchingTermination, nearest_neighbors
from models import IterationTrace, selection_index

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GdConfig:
    learning_rate: float = config.LEARNING_RATE
    max_iterations: int = config.MAX_ITERATIONS
    tolerance: float = config.TOLERANCE
    sieve_order: object = config.SIEVE_ORDER
    initial_guess: tuple = None
    ridge: float = config.RIDGE

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractViolation('learning rate must be positive')
        if not self.tolerance > 0:
            raise ContractViolation('tolerance must be positive')
        if self.max_iterations < 1:
            raise ContractViolation('iteration cap must be at least 1')
        if self.sieve_order != 'auto' and (int(self.sieve_order) != self.sieve_order
                                           or self.sieve_order < 0):
            raise ContractViolation(f"sieve order must be 'auto' or a nonnegative integer, "
                                    f"got {self.sieve_order!r}")

    def start(self, dimension):
        if self.initial_guess is None:
            return np.zeros(dimension)
        guess = np.array(self.initial_guess, dtype=float)
        if guess.shape != (dimension,):
            raise ContractViolation(f'initial guess has shape {guess.shape}, expected ({dimension},)')
        return guess

    def with_order(self, q):
        return dataclasses.replace(self, sieve_order=int(q))


@dataclass(frozen=True, eq=False)
class FirstStageFit:
    delta: np.ndarray
    pi: object
    index_rescale: IndexRescale
    trace: IterationTrace
    iterations: int
    converged: bool
    method: str = 'sieve'

    @property
    def order(self):
        return None if self.pi is None else self.pi.basis.order

    def to_dico(self):
        return {
            "method": self.method,
            "delta": self.delta.tolist(),
            "order": self.order,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def __repr__(self) -> str:
        return (f'<FirstStageFit method: {self.method} delta: {np.round(self.delta, 4)} '
                f'iterations: {self.iterations} converged: {self.converged}>')


#----------------------------------------------------------------------------#
# Sieve first stage.
#----------------------------------------------------------------------------#

def _sieve_fit(dataset, z_index, q, ridge):
    rescale = IndexRescale.fit(z_index)
    rows = legendre_univariate(rescale(z_index), q)
    pi = sieve_ols_fit(rows, dataset.D.astype(float), ridge=ridge,
                       basis=SieveBasis(q)).with_rescale(rescale)
    return pi, rows @ pi.values


def first_stage_order(dataset, delta, gd=GdConfig(), candidates=config.FIRST_STAGE_ORDERS):
    if gd.sieve_order != 'auto':
        return int(gd.sieve_order)
    z_index = selection_index(dataset, delta)
    q = select_order_aic(dataset, lambda q: _sieve_fit(dataset, z_index, q, gd.ridge)[1],
                         candidates, dataset.n, equation='selection',
                         kind=BasisKind.UNIVARIATE)
    log.info('first-stage sieve order %d chosen by AIC', q)
    return q


def _gradient_step(dataset, delta, fitted, gamma):
    residual = fitted - dataset.D
    return delta - gamma / dataset.n * (residual @ dataset.Z), float(np.mean(residual ** 2))


def sbgd_step(dataset, delta_k, gd=GdConfig(), F=None):
    """One round: refit the sieve of F_U at delta_k, then take the gradient step.

    A known CDF `F` replaces the sieve fit; pi is then None.
    """
    delta_k = np.asarray(delta_k, dtype=float)
    z_index = selection_index(dataset, delta_k)
    if F is None:
        q = first_stage_order(dataset, delta_k, gd)
        pi, fitted = _sieve_fit(dataset, z_index, q, gd.ridge)
    else:
        pi, fitted = None, np.asarray(F(z_index), dtype=float)
    delta_next, _ = _gradient_step(dataset, delta_k, fitted, gd.learning_rate)
    return delta_next, pi


def sbgd_first_stage(dataset, gd=GdConfig()):
    delta = gd.start(dataset.p_z)
    q = first_stage_order(dataset, delta, gd)
    trace = IterationTrace()
    log.info('sieve first stage: n=%d q=%d gamma=%g', dataset.n, q, gd.learning_rate)

    converged = False
    iteration = 0
    pi = None
    while iteration < gd.max_iterations:
        iteration += 1
        z_index = selection_index(dataset, delta)
        pi, fitted = _sieve_fit(dataset, z_index, q, gd.ridge)
        delta_next, loss = _gradient_step(dataset, delta, fitted, gd.learning_rate)
        change = float(np.max(np.abs(delta_next - delta))) if delta.size else 0.0
        trace.record(iteration, change, loss)
        if not np.all(np.isfinite(delta_next)):
            trace.record(iteration, change, loss, force=True)
            raise DivergenceError(f'first stage diverged at iteration {iteration}', trace)
        delta = delta_next
        if change < gd.tolerance:
            converged = True
            break
        if iteration % 1000 == 0:
            log.debug('first stage iteration %d: change=%.3g loss=%.6g', iteration, change, loss)

    trace.record(iteration, change, loss, force=True)
    if not converged:
        log.warning('first stage hit the iteration cap (%d) without converging', gd.max_iterations)
    log.info('sieve first stage finished after %d iterations', iteration)
    return FirstStageFit(delta, pi, pi.rescale[0], trace, iteration, converged)


def evaluate_F_U(fit, u):
    if fit.pi is None:
        raise ContractViolation(f'a {fit.method} first stage carries no sieve for F_U')
    value = fit.pi.evaluate(u)
    return float(value) if np.ndim(value) == 0 else value


#----------------------------------------------------------------------------#
# Matching first stage.
#----------------------------------------------------------------------------#

def matching_first_stage(dataset, gd=GdConfig(), term=MatchingTermination(),
                         m=config.NEIGHBORS):
    delta = gd.start(dataset.p_z)
    monitor = term.monitor()
    monitor.update(delta)
    trace = IterationTrace()
    D = dataset.D.astype(float)
    cap = min(gd.max_iterations, term.max_iterations)
    log.info('matching first stage: n=%d m=%d T=%d', dataset.n, m, term.stability_rounds)

    iteration = 0
    stable = False
    while iteration < cap:
        iteration += 1
        neighbors = nearest_neighbors(selection_index(dataset, delta), m)
        fitted = D[neighbors].mean(axis=1)
        delta_next, loss = _gradient_step(dataset, delta, fitted, gd.learning_rate)
        change = float(np.max(np.abs(delta_next - delta))) if delta.size else 0.0
        trace.record(iteration, change, loss)
        if not np.all(np.isfinite(delta_next)):
            raise DivergenceError(f'matching first stage diverged at iteration {iteration}', trace)
        delta = delta_next
        if monitor.update(delta):
            stable = True
            break

    trace.record(iteration, change, loss, force=True)
    if not stable:
        log.warning('matching first stage hit the iteration cap (%d)', cap)
    return FirstStageFit(delta, None, None, trace, iteration, stable, method='matching')
