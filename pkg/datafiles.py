import logging
import re
from dataclasses import dataclass

import numpy as np
import pandas as pd

from errors import ContractViolation, SchemaError
from models import Dataset

log = logging.getLogger(__name__)

#----------------------------------------------------------------------------#
# Schema.
#----------------------------------------------------------------------------#

####################################################################
# NOTE:
# Each equation has one normalized regressor (coefficient fixed to
# +1 or -1 through its sign) and any number of free regressors.
# Free regressors may be standardized on load, normalized ones are
# only multiplied by their sign. Rows are numbered from 1, header
# excluded.
####################################################################

@dataclass(frozen=True)
class CsvSchema:
    selection_normalized: str = 'z0'
    selection_free: tuple = None
    outcome_normalized: str = 'x0'
    outcome_free: tuple = None
    d: str = 'D'
    y: str = 'Y'
    selection_sign: float = 1.0
    outcome_sign: float = 1.0

    def __post_init__(self):
        for sign in (self.selection_sign, self.outcome_sign):
            if sign not in (1.0, -1.0):
                raise ContractViolation(f'normalization sign must be +1 or -1, got {sign}')

    @classmethod
    def default(cls, p_z, p_x):
        return cls(selection_free=tuple(f'z{j}' for j in range(1, p_z + 1)),
                   outcome_free=tuple(f'x{j}' for j in range(1, p_x + 1)))

    def resolve(self, columns):
        """Fill in free regressors from the header: z1, z2, ... and x1, x2, ..."""
        selection = self.selection_free
        outcome = self.outcome_free
        if selection is None:
            selection = _numbered(columns, 'z', self.selection_normalized)
        if outcome is None:
            outcome = _numbered(columns, 'x', self.outcome_normalized)
        return CsvSchema(self.selection_normalized, tuple(selection), self.outcome_normalized,
                         tuple(outcome), self.d, self.y, self.selection_sign, self.outcome_sign)

    @property
    def columns(self):
        return ([self.selection_normalized, *self.selection_free,
                 self.outcome_normalized, *self.outcome_free, self.d, self.y])


def _numbered(columns, prefix, skip):
    pattern = re.compile(rf'^{prefix}(\d+)$')
    found = [(int(m.group(1)), c) for c in columns
             if c != skip and (m := pattern.match(c)) and int(m.group(1)) > 0]
    return [c for _, c in sorted(found)]


#----------------------------------------------------------------------------#
# Transforms.
#----------------------------------------------------------------------------#

def standardize_columns(values, names=()):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    for j in np.flatnonzero(std == 0):
        name = names[j] if j < len(names) else j
        raise SchemaError(f'column {name} is constant and cannot be standardized')
    return (values - mean) / std


def binarize_at_selected_median(ystar, D):
    """Y = 1{Y* > median of Y* over D = 1}, missing where D = 0."""
    ystar = np.asarray(ystar, dtype=float)
    selected = np.asarray(D) == 1
    if not selected.any():
        raise ContractViolation('binarizing needs at least one selected observation')
    median = np.median(ystar[selected])
    return np.where(selected, (ystar > median).astype(float), np.nan)


#----------------------------------------------------------------------------#
# Load / write.
#----------------------------------------------------------------------------#

def _first_row(mask):
    return int(np.flatnonzero(mask)[0]) + 1


def load_csv(path, schema=CsvSchema(), standardize=False, binarize=False):
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise SchemaError(f'cannot read {path}: {err}') from err

    schema = schema.resolve(list(frame.columns))
    missing = [c for c in schema.columns if c not in frame.columns]
    if missing:
        raise SchemaError(f'{path} is missing columns: {", ".join(missing)}')

    regressors = [c for c in schema.columns if c not in (schema.d, schema.y)]
    for column in regressors:
        values = pd.to_numeric(frame[column], errors='coerce')
        bad = values.isna().to_numpy()
        if bad.any():
            raise SchemaError(f'column {column} is not numeric or has blanks', _first_row(bad))

    D = pd.to_numeric(frame[schema.d], errors='coerce').to_numpy()
    not_binary = ~np.isin(D, (0, 1))
    if not_binary.any():
        raise SchemaError(f'{schema.d} must be 0 or 1', _first_row(not_binary))
    D = D.astype(np.int8)

    Y = pd.to_numeric(frame[schema.y], errors='coerce').to_numpy(dtype=float)
    blank = frame[schema.y].isna().to_numpy()
    garbled = np.isnan(Y) & ~blank
    if garbled.any():
        raise SchemaError(f'{schema.y} is not numeric', _first_row(garbled))
    if np.any(~blank & (D == 0)):
        raise SchemaError(f'{schema.y} is present where {schema.d} = 0', _first_row(~blank & (D == 0)))
    if np.any(blank & (D == 1)):
        raise SchemaError(f'{schema.y} is missing where {schema.d} = 1', _first_row(blank & (D == 1)))
    if binarize:
        Y = binarize_at_selected_median(Y, D)
    elif np.any((D == 1) & ~np.isin(Y, (0, 1))):
        raise SchemaError(f'{schema.y} must be 0 or 1 where observed',
                          _first_row((D == 1) & ~np.isin(Y, (0, 1))))

    z0 = schema.selection_sign * frame[schema.selection_normalized].to_numpy(dtype=float)
    x0 = schema.outcome_sign * frame[schema.outcome_normalized].to_numpy(dtype=float)
    Z = frame[list(schema.selection_free)].to_numpy(dtype=float).reshape(len(frame), -1)
    X = frame[list(schema.outcome_free)].to_numpy(dtype=float).reshape(len(frame), -1)
    if standardize:
        Z = standardize_columns(Z, schema.selection_free)
        X = standardize_columns(X, schema.outcome_free)

    try:
        dataset = Dataset(z0, Z, x0, X, D, Y)
    except ContractViolation as err:
        raise SchemaError(str(err)) from err
    log.info('loaded %s: %r', path, dataset)
    return dataset


def write_csv(dataset, path, schema=None):
    schema = schema or CsvSchema.default(dataset.p_z, dataset.p_x)
    columns = {schema.selection_normalized: schema.selection_sign * dataset.z0}
    columns.update({name: dataset.Z[:, j] for j, name in enumerate(schema.selection_free)})
    columns[schema.outcome_normalized] = schema.outcome_sign * dataset.x0
    columns.update({name: dataset.X[:, j] for j, name in enumerate(schema.outcome_free)})
    columns[schema.d] = dataset.D.astype(int)
    columns[schema.y] = dataset.Y.astype(float).filled(np.nan)
    pd.DataFrame(columns).to_csv(path, index=False, float_format='%.17g', na_rep='')
    log.info('wrote %s: %r', path, dataset)
