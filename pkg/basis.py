"""
Orthonormal shifted-Legendre sieves on [0, 1].

Univariate bases have q + 1 functions, bivariate tensor bases (q + 1)**2,
flattened row-major: entry s * (q + 1) + t is P_s(u) * P_t(v).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import linalg

import config
from errors import ContractViolation, SellabError, SingularityError

log = logging.getLogger(__name__)


class BasisKind(Enum):
    UNIVARIATE = 'univariate'
    TENSOR = 'tensor'


@dataclass(frozen=True)
class SieveBasis:
    order: int
    kind: BasisKind = BasisKind.UNIVARIATE

    def __post_init__(self):
        _check_order(self.order)

    @property
    def dimension(self):
        if self.kind is BasisKind.TENSOR:
            return (self.order + 1) ** 2
        return self.order + 1

    def evaluate(self, u, v=None):
        if self.kind is BasisKind.TENSOR:
            if v is None:
                raise ContractViolation('a tensor basis needs two arguments')
            return tensor_bivariate(u, v, self.order)
        return legendre_univariate(u, self.order)


@dataclass(frozen=True)
class IndexRescale:
    """Affine map of an index onto [0, 1], fitted on a sample's min and max."""
    lower: float
    upper: float

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, dtype=float)
        return cls(float(values.min()), float(values.max()))

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        width = self.upper - self.lower
        if width <= 0:
            return np.full(values.shape, 0.5)
        return np.clip((values - self.lower) / width, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class SieveCoefficients:
    values: np.ndarray
    basis: SieveBasis = None
    rescale: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        if self.basis is not None and values.shape != (self.basis.dimension,):
            raise ContractViolation(
                f'{values.shape[0]} coefficients for a basis of dimension {self.basis.dimension}')

    def design(self, *args):
        if self.basis is None:
            raise ContractViolation('coefficients carry no basis to evaluate')
        if self.rescale:
            args = tuple(fn(a) for fn, a in zip(self.rescale, args))
        return self.basis.evaluate(*args)

    def evaluate(self, *args):
        return self.design(*args) @ self.values

    def with_rescale(self, *maps):
        return SieveCoefficients(self.values, self.basis, tuple(maps))


def _check_order(q):
    if int(q) != q or q < 0:
        raise ContractViolation(f'sieve order must be a nonnegative integer, got {q}')


#----------------------------------------------------------------------------#
# Basis evaluation.
#----------------------------------------------------------------------------#

def legendre_univariate(u, q):
    """Orthonormal shifted Legendre polynomials of degree 0..q at u.

    Inputs outside [0, 1] are clamped. A scalar u gives a vector of length
    q + 1, an array gives one row per element.
    """
    _check_order(q)
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    scale = np.sqrt(2.0 * np.arange(q + 1) + 1.0)
    values = npleg.legvander(2.0 * u - 1.0, int(q)) * scale
    # legvander promotes scalars to length-1 arrays
    return values[0] if u.ndim == 0 else values


def tensor_bivariate(u, v, q):
    pu = legendre_univariate(u, q)
    pv = legendre_univariate(v, q)
    if pu.shape != pv.shape:
        raise ContractViolation(f'argument shapes differ: {pu.shape} vs {pv.shape}')
    return (pu[..., :, None] * pv[..., None, :]).reshape(pu.shape[:-1] + (-1,))


#----------------------------------------------------------------------------#
# Sieve OLS.
#----------------------------------------------------------------------------#

def sieve_ols_fit(rows, responses, mask=None, ridge=config.RIDGE, basis=None):
    """Minimise sum_i mask_i (y_i - row_i' pi)^2 + ridge * |pi|^2."""
    rows = np.asarray(rows, dtype=float)
    responses = np.asarray(responses, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ContractViolation(f'design must be a nonempty matrix, got shape {rows.shape}')
    if responses.shape != (rows.shape[0],):
        raise ContractViolation(f'responses have shape {responses.shape}, expected ({rows.shape[0]},)')
    if ridge < 0:
        raise ContractViolation('ridge must be nonnegative')

    keep = np.ones(rows.shape[0], bool) if mask is None else np.asarray(mask).astype(bool)
    if not keep.any():
        raise ContractViolation('at least one row must be masked in')
    design = rows[keep]
    y = responses[keep]

    dim = design.shape[1]
    gram = design.T @ design
    rhs = design.T @ y
    if ridge == 0:
        rank = np.linalg.matrix_rank(gram)
        if rank < dim:
            raise SingularityError(
                f'sieve Gram matrix has rank {rank} < dimension {dim}', dimension=dim, rank=rank)
    else:
        gram = gram + ridge * np.eye(dim)

    try:
        values = linalg.solve(gram, rhs, assume_a='sym')
    except linalg.LinAlgError as err:
        raise SingularityError(f'sieve Gram matrix is singular in dimension {dim}: {err}',
                               dimension=dim) from err
    return SieveCoefficients(values, basis)


#----------------------------------------------------------------------------#
# Order selection.
#----------------------------------------------------------------------------#

def aic_criterion(sigma2, terms, effective_n, floor=config.AIC_FLOOR):
    return math.log(max(sigma2, floor)) + 2.0 * terms / effective_n


def select_order_aic(dataset, fitter, candidates, effective_n, equation='selection',
                     kind=BasisKind.UNIVARIATE, responses=None):
    """Pick the sieve order with the smallest AIC-type criterion.

    The selection equation scores residuals of D on every observation, the
    outcome equation scores residuals of Y on the selected ones. Explicit
    `responses` replace D or Y and keep the equation's rows. The penalty
    counts sieve functions; ties go to the smaller order.
    """
    candidates = sorted(set(int(q) for q in candidates))
    if not candidates:
        raise ContractViolation('no candidate orders')
    if effective_n < 1:
        raise ContractViolation('effective sample size must be positive')

    if equation == 'selection':
        default = dataset.D.astype(float)
        weights = np.ones(dataset.n)
    elif equation == 'outcome':
        default = dataset.y_filled()
        weights = dataset.D.astype(float)
    else:
        raise ContractViolation(f'unknown equation {equation!r}')
    if responses is None:
        responses = default
    else:
        responses = np.asarray(responses, dtype=float)
        if responses.shape != (dataset.n,):
            raise ContractViolation(
                f'responses have shape {responses.shape}, expected ({dataset.n},)')

    best_order, best_score = None, math.inf
    for q in candidates:
        try:
            fitted = np.asarray(fitter(q), dtype=float)
        except (SellabError, np.linalg.LinAlgError) as err:
            log.warning('sieve order %d skipped: %s', q, err)
            continue
        sigma2 = float(np.sum(weights * (responses - fitted) ** 2) / np.sum(weights))
        score = aic_criterion(sigma2, SieveBasis(q, kind).dimension, effective_n)
        log.debug('sieve order %d: sigma2=%.6g aic=%.6g', q, sigma2, score)
        if score < best_score:
            best_order, best_score = q, score

    if best_order is None:
        raise SingularityError('every candidate sieve order failed to fit')
    return best_order
