"""
Parametric baselines assuming (U, V) standard bivariate normal with
correlation rho: two-step nonlinear least squares and joint maximum
likelihood.

Both work on augmented regressors Zbar = (1, z0, Z) and Xbar = (1, x0, X)
with coefficients (c0, c1, delta) and (c0, c1, beta). Reported coefficients
are rescaled by c1 so they sit on the same scale as the semiparametric
estimators, where the coefficient of z0 (x0) is one.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import optimize, special

import config
from errors import ContractViolation, EstimationError, InsufficientDataError

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
# beyond this the normal tails are below double precision
_CLIP = 37.0


#----------------------------------------------------------------------------#
# Bivariate normal CDF.
#----------------------------------------------------------------------------#

def _nodes(abs_r):
    if abs_r < 0.3:
        count = 6
    elif abs_r < 0.75:
        count = 12
    else:
        count = 20
    t, w = npleg.leggauss(count)
    return 1.0 + t, w


def _bvnu(h, k, r):
    """P(A > h, B > k) for a standard bivariate normal with correlation r.

    Gauss-Legendre reduction of the correlation integral, with a separate
    expansion for |r| >= 0.925 (Drezner-Wesolowsky, as refined by Genz).
    """
    ndtr = special.ndtr
    if r == 0:
        return ndtr(-h) * ndtr(-k)
    x, w = _nodes(abs(r))
    hk = h * k

    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r) / 2.0
        sn = np.sin(asr * x)
        bvn = np.exp((sn * hk[..., None] - hs[..., None]) / (1.0 - sn ** 2)) @ w
        bvn = bvn * asr / TWO_PI + ndtr(-h) * ndtr(-k)
        return np.clip(bvn, 0.0, 1.0)

    if r < 0:
        k = -k
        hk = -hk
    a_sq = 1.0 - r * r
    a = math.sqrt(a_sq)
    bs = (h - k) ** 2
    asr = -(bs / a_sq + hk) / 2.0
    c = (4.0 - hk) / 8.0
    d = (12.0 - hk) / 80.0
    bvn = np.where(asr > -100,
                   a * np.exp(asr) * (1 - c * (bs - a_sq) * (1 - d * bs) / 3 + c * d * a_sq ** 2),
                   0.0)
    b = np.sqrt(bs)
    sp = math.sqrt(TWO_PI) * ndtr(-b / a)
    bvn = np.where(hk > -100, bvn - np.exp(-hk / 2) * sp * b * (1 - c * bs * (1 - d * bs) / 3), bvn)

    half = a / 2.0
    xs = (half * x) ** 2
    asr = -(bs[..., None] / xs + hk[..., None]) / 2.0
    sp = 1.0 + c[..., None] * xs * (1.0 + 5.0 * d[..., None] * xs)
    rs = np.sqrt(1.0 - xs)
    ep = np.exp(-(hk[..., None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
    terms = np.where(asr > -100, np.exp(asr) * (sp - ep), 0.0)
    bvn = (half * (terms @ w) - bvn) / TWO_PI

    if r > 0:
        bvn = bvn + ndtr(-np.maximum(h, k))
    else:
        tail = np.where(h < 0, ndtr(k) - ndtr(h), ndtr(-h) - ndtr(-k))
        bvn = np.where(h >= k, -bvn, tail - bvn)
    return np.clip(bvn, 0.0, 1.0)


def bivariate_normal_cdf(u, v, rho):
    """F2(u, v, rho) = P(A <= u, B <= v); absolute error below 1e-7."""
    rho = float(rho)
    if not abs(rho) < 1:
        raise ContractViolation(f'correlation must lie strictly inside (-1, 1), got {rho}')
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    h = -np.clip(u, -_CLIP, _CLIP)
    k = -np.clip(v, -_CLIP, _CLIP)
    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        value = _bvnu(h, k, rho)
    return float(value) if value.ndim == 0 else value


#----------------------------------------------------------------------------#
# Parameters and results.
#----------------------------------------------------------------------------#

@dataclass(frozen=True, eq=False)
class AugmentedParameters:
    c_delta0: float
    c_delta1: float
    delta_bar: np.ndarray
    c_beta0: float
    c_beta1: float
    beta_bar: np.ndarray
    rho: float

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ContractViolation(f'rho must lie strictly inside (-1, 1), got {self.rho}')

    @property
    def selection(self):
        return np.concatenate(([self.c_delta0, self.c_delta1], self.delta_bar))

    @property
    def outcome(self):
        return np.concatenate(([self.c_beta0, self.c_beta1], self.beta_bar))

    @classmethod
    def from_vector(cls, theta, p_z, p_x, rho_bound=config.RHO_BOUND):
        theta = np.asarray(theta, dtype=float)
        sel = theta[:p_z + 2]
        out = theta[p_z + 2:p_z + p_x + 4]
        rho = rho_bound * math.tanh(theta[-1])
        return cls(sel[0], sel[1], sel[2:], out[0], out[1], out[2:], rho)

    def rescaled(self, threshold=1e-8):
        if abs(self.c_delta1) < threshold or abs(self.c_beta1) < threshold:
            raise EstimationError(
                f'cannot rescale: c_delta1={self.c_delta1:.3g}, c_beta1={self.c_beta1:.3g}')
        return self.delta_bar / self.c_delta1, self.beta_bar / self.c_beta1


class OptimizerStatus(Enum):
    CONVERGED = 'converged'
    MAX_ITER = 'maxIter'
    LINE_SEARCH_FAIL = 'lineSearchFail'

    @classmethod
    def from_result(cls, result):
        if result.success:
            return cls.CONVERGED
        if result.status == 1:
            return cls.MAX_ITER
        return cls.LINE_SEARCH_FAIL


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = config.OPTIMIZER_MAX_ITERATIONS
    gtol: float = config.OPTIMIZER_GTOL
    restarts: int = config.RESTARTS
    seed: int = config.SEED
    workers: int = 1
    rho_bound: float = config.RHO_BOUND
    prob_floor: float = config.PROB_FLOOR

    def starts(self, dimension):
        rng = np.random.default_rng(self.seed)
        return [np.zeros(dimension)] + [rng.normal(0.0, 1.0, dimension)
                                        for _ in range(self.restarts)]


@dataclass(frozen=True, eq=False)
class ParametricFit:
    method: str
    delta: np.ndarray
    beta: np.ndarray
    rho: float
    objective_value: float
    status: OptimizerStatus
    iterations: int
    parameters: AugmentedParameters = None

    def to_dico(self):
        return {
            "method": self.method,
            "delta": self.delta.tolist(),
            "beta": self.beta.tolist(),
            "rho": self.rho,
            "objective": self.objective_value,
            "status": self.status.value,
            "iterations": self.iterations,
        }

    def __repr__(self) -> str:
        return (f'<ParametricFit method: {self.method} rho: {self.rho:.4f} '
                f'status: {self.status.value}>')


#----------------------------------------------------------------------------#
# Objectives.
#----------------------------------------------------------------------------#

def augmented_selection(dataset):
    return np.column_stack((np.ones(dataset.n), dataset.z0, dataset.Z))


def augmented_outcome(dataset):
    return np.column_stack((np.ones(dataset.n), dataset.x0, dataset.X))


def nls_selection_loss(dataset, selection_coef):
    """(1/n) sum_i (D_i - Phi(Zbar_i' deltabar))^2"""
    index = augmented_selection(dataset) @ np.asarray(selection_coef, dtype=float)
    return float(np.mean((dataset.D - special.ndtr(index)) ** 2))


def nls_outcome_loss(dataset, selection_coef, outcome_coef, rho, floor=config.PROB_FLOOR):
    """(1/S_n) sum_{D_i=1} (Y_i - F2(a_i, b_i, rho) / Phi(a_i))^2"""
    selected = dataset.selected
    if not selected.any():
        raise InsufficientDataError('the outcome step needs at least one selected observation')
    a = (augmented_selection(dataset) @ np.asarray(selection_coef, dtype=float))[selected]
    b = (augmented_outcome(dataset) @ np.asarray(outcome_coef, dtype=float))[selected]
    ratio = bivariate_normal_cdf(a, b, rho) / np.maximum(special.ndtr(a), floor)
    return float(np.mean((dataset.y_filled()[selected] - ratio) ** 2))


def mle_log_likelihood(dataset, params, floor=config.PROB_FLOOR):
    """Average log-likelihood of (D, DY) under bivariate normal errors."""
    a = augmented_selection(dataset) @ params.selection
    b = augmented_outcome(dataset) @ params.outcome
    D = dataset.D.astype(float)
    Y = dataset.y_filled()
    both = bivariate_normal_cdf(a, b, params.rho)
    picked = special.ndtr(a)
    terms = (D * Y * np.log(np.maximum(both, floor))
             + D * (1 - Y) * np.log(np.maximum(picked - both, floor))
             + (1 - D) * np.log(np.maximum(1 - picked, floor)))
    return float(np.mean(terms))


def _selection_objective(theta, dataset, opt):
    return nls_selection_loss(dataset, theta)


def _outcome_objective(theta, dataset, opt, selection_coef):
    rho = opt.rho_bound * math.tanh(theta[-1])
    return nls_outcome_loss(dataset, selection_coef, theta[:-1], rho, opt.prob_floor)


def _mle_objective(theta, dataset, opt):
    params = AugmentedParameters.from_vector(theta, dataset.p_z, dataset.p_x, opt.rho_bound)
    return -mle_log_likelihood(dataset, params, opt.prob_floor)


#----------------------------------------------------------------------------#
# Multi-start quasi-Newton.
#----------------------------------------------------------------------------#

def _run_start(objective, start, dataset, opt, extra):
    args = (dataset, opt) + tuple(extra)
    return optimize.minimize(objective, start, args=args, method='BFGS',
                             options={'maxiter': opt.max_iterations, 'gtol': opt.gtol})


def _best_of_starts(objective, dimension, dataset, opt, extra=()):
    starts = opt.starts(dimension)
    initial = objective(starts[0], dataset, opt, *extra)
    if not np.isfinite(initial):
        raise EstimationError(f'objective is not finite at the zero start ({initial})')

    if opt.workers > 1:
        with ProcessPoolExecutor(max_workers=opt.workers) as executor:
            futures = [executor.submit(_run_start, objective, s, dataset, opt, extra)
                       for s in starts]
            results = [f.result() for f in futures]
    else:
        results = [_run_start(objective, s, dataset, opt, extra) for s in starts]

    ranked = [(r.fun, i, r) for i, r in enumerate(results) if np.isfinite(r.fun)]
    if not ranked:
        raise EstimationError('no start produced a finite objective')
    value, index, best = min(ranked, key=lambda item: (item[0], item[1]))
    log.debug('best of %d starts: #%d objective=%.8g status=%s',
              len(starts), index, value, best.status)
    return best


def two_step_nls(dataset, opt=OptimizerConfig()):
    if dataset.s_n == 0:
        raise InsufficientDataError('two-step NLS needs at least one selected observation')
    log.info('two-step NLS: n=%d s_n=%d', dataset.n, dataset.s_n)

    first = _best_of_starts(_selection_objective, dataset.p_z + 2, dataset, opt)
    second = _best_of_starts(_outcome_objective, dataset.p_x + 3, dataset, opt, (first.x,))

    theta = np.concatenate((first.x, second.x))
    params = AugmentedParameters.from_vector(theta, dataset.p_z, dataset.p_x, opt.rho_bound)
    delta, beta = params.rescaled()
    status = OptimizerStatus.from_result(second)
    if status is OptimizerStatus.CONVERGED:
        status = OptimizerStatus.from_result(first)
    return ParametricFit('nls', delta, beta, params.rho, float(second.fun), status,
                         int(first.nit + second.nit), params)


def joint_mle(dataset, opt=OptimizerConfig()):
    log.info('joint MLE: n=%d s_n=%d', dataset.n, dataset.s_n)
    best = _best_of_starts(_mle_objective, dataset.p_z + dataset.p_x + 5, dataset, opt)
    params = AugmentedParameters.from_vector(best.x, dataset.p_z, dataset.p_x, opt.rho_bound)
    delta, beta = params.rescaled()
    return ParametricFit('mle', delta, beta, params.rho, float(best.fun),
                         OptimizerStatus.from_result(best), int(best.nit), params)
