from dataclasses import dataclass

import numpy as np

from errors import ContractViolation

#----------------------------------------------------------------------------#
# Models.
#----------------------------------------------------------------------------#


def frozen_array(values, dtype=float, ndim=1, name='array'):
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != ndim:
        raise ContractViolation(f'{name} must be {ndim}-dimensional, got shape {arr.shape}')
    arr.setflags(write=False)
    return arr


####################################################################
# Observed sample of the selective-labeling system.
#   D = 1{z0 + Z'delta - U > 0}
#   Y = D * 1{x0 + X'beta - V > 0}, not observed where D = 0
# Y is a masked array: masked exactly where D = 0, so unobserved
# outcomes cannot leak into arithmetic without an explicit fill.
####################################################################

@dataclass(frozen=True, eq=False)
class Dataset:
    z0: np.ndarray
    Z: np.ndarray
    x0: np.ndarray
    X: np.ndarray
    D: np.ndarray
    Y: np.ma.MaskedArray

    def __post_init__(self):
        z0 = frozen_array(self.z0, name='z0')
        x0 = frozen_array(self.x0, name='x0')
        Z = frozen_array(self.Z, ndim=2, name='Z')
        X = frozen_array(self.X, ndim=2, name='X')
        n = z0.shape[0]
        if n < 1:
            raise ContractViolation('a dataset needs at least one observation')

        D = np.asarray(self.D)
        if D.ndim != 1:
            raise ContractViolation(f'D must be 1-dimensional, got shape {D.shape}')
        if not np.all((D == 0) | (D == 1)):
            raise ContractViolation('D must be binary')
        D = frozen_array(D, dtype=np.int8, name='D')

        for name, arr in (('Z', Z), ('x0', x0), ('X', X), ('D', D)):
            if arr.shape[0] != n:
                raise ContractViolation(f'{name} has {arr.shape[0]} rows, expected {n}')
        for name, arr in (('z0', z0), ('Z', Z), ('x0', x0), ('X', X)):
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f'{name} has non-finite entries')

        Y = _outcomes(self.Y, D)

        object.__setattr__(self, 'z0', z0)
        object.__setattr__(self, 'Z', Z)
        object.__setattr__(self, 'x0', x0)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'D', D)
        object.__setattr__(self, 'Y', Y)

    @property
    def n(self):
        return self.z0.shape[0]

    @property
    def p_z(self):
        return self.Z.shape[1]

    @property
    def p_x(self):
        return self.X.shape[1]

    @property
    def selected(self):
        return self.D == 1

    @property
    def s_n(self):
        return int(self.D.sum())

    def y_filled(self, fill=0.0):
        return self.Y.astype(float).filled(fill)

    def to_dico(self):
        return {
            "n": self.n,
            "p_z": self.p_z,
            "p_x": self.p_x,
            "s_n": self.s_n,
            "share_selected": self.s_n / self.n,
            "share_y_among_selected": float(self.Y.mean()) if self.s_n else None,
        }

    def __repr__(self) -> str:
        return f'<Dataset n: {self.n} p_z: {self.p_z} p_x: {self.p_x} s_n: {self.s_n}>'


def _outcomes(values, D):
    n = D.shape[0]
    if np.ma.isMaskedArray(values):
        data = np.ma.getdata(values)
        missing = np.ma.getmaskarray(values)
    else:
        data = np.array(values, dtype=float)
        missing = np.isnan(data) if data.dtype.kind == 'f' else np.zeros(data.shape, bool)
    if data.shape != (n,):
        raise ContractViolation(f'Y has shape {data.shape}, expected ({n},)')

    observed = ~missing
    selected = D == 1
    if np.any(observed & ~selected):
        row = int(np.flatnonzero(observed & ~selected)[0])
        raise ContractViolation(f'Y is present where D = 0 at observation {row}')
    if np.any(missing & selected):
        row = int(np.flatnonzero(missing & selected)[0])
        raise ContractViolation(f'Y is missing where D = 1 at observation {row}')

    clean = np.where(observed, data, 0)
    if not np.all((clean == 0) | (clean == 1)):
        raise ContractViolation('Y must be binary where observed')
    Y = np.ma.MaskedArray(clean.astype(np.int8), mask=~selected)
    Y.setflags(write=False)
    return Y


@dataclass(frozen=True, eq=False)
class ParameterPoint:
    delta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        delta = frozen_array(self.delta, name='delta')
        beta = frozen_array(self.beta, name='beta')
        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(beta))):
            raise ContractViolation('parameter entries must be finite')
        object.__setattr__(self, 'delta', delta)
        object.__setattr__(self, 'beta', beta)

    def check_against(self, dataset):
        if self.delta.shape[0] != dataset.p_z or self.beta.shape[0] != dataset.p_x:
            raise ContractViolation(
                f'parameter lengths ({self.delta.shape[0]}, {self.beta.shape[0]}) '
                f'do not match dataset ({dataset.p_z}, {dataset.p_x})')
        return self

    def __repr__(self) -> str:
        return f'<ParameterPoint delta: {np.round(self.delta, 4)} beta: {np.round(self.beta, 4)}>'


@dataclass(frozen=True)
class IndexPair:
    z_index: float
    x_index: float

    def __post_init__(self):
        if not (np.isfinite(self.z_index) and np.isfinite(self.x_index)):
            raise ContractViolation('index pair must be finite')


#----------------------------------------------------------------------------#
# Index computations.
#----------------------------------------------------------------------------#

def _coefficients(values, expected, name):
    coef = np.asarray(values, dtype=float)
    if coef.ndim != 1 or coef.shape[0] != expected:
        raise ContractViolation(f'{name} has shape {coef.shape}, expected ({expected},)')
    return coef


def selection_index(dataset, delta):
    delta = _coefficients(delta, dataset.p_z, 'delta')
    return dataset.z0 + dataset.Z @ delta


def outcome_index(dataset, beta):
    beta = _coefficients(beta, dataset.p_x, 'beta')
    return dataset.x0 + dataset.X @ beta


def index_pairs(dataset, delta, beta):
    """(n, 2) array whose row i is the IndexPair of observation i."""
    return np.column_stack((selection_index(dataset, delta), outcome_index(dataset, beta)))


#----------------------------------------------------------------------------#
# Iteration traces shared by the gradient-descent estimators.
#----------------------------------------------------------------------------#

@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    max_change: float
    loss: float


class IterationTrace:
    """Every iteration up to `full_until`, then every `thin_every`-th."""

    def __init__(self, full_until=None, thin_every=None):
        import config
        self.full_until = config.TRACE_FULL_UNTIL if full_until is None else full_until
        self.thin_every = config.TRACE_THIN_EVERY if thin_every is None else thin_every
        self.entries = []

    def record(self, iteration, max_change, loss, force=False):
        keep = (force or iteration <= self.full_until
                or iteration % self.thin_every == 0)
        if keep and (not self.entries or self.entries[-1].iteration != iteration):
            self.entries.append(TraceEntry(int(iteration), float(max_change), float(loss)))

    @property
    def last(self):
        return self.entries[-1] if self.entries else None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __repr__(self) -> str:
        return f'<IterationTrace entries: {len(self.entries)} last: {self.last}>'
