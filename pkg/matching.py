import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

import config
from errors import ContractViolation, DivergenceError, InsufficientDataError
from models import IndexPair

log = logging.getLogger(__name__)

#----------------------------------------------------------------------------#
# Neighbour weights.
#----------------------------------------------------------------------------#

####################################################################
# NOTE:
# Only the rows that receive weights are stored. Row rows[k] puts
# weight 1 / m_eff on each observation in neighbors[k]; every other
# entry of the n x n matrix is zero.
####################################################################

@dataclass(frozen=True, eq=False)
class NeighborWeights:
    n: int
    rows: np.ndarray
    neighbors: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.intp)
        neighbors = np.array(self.neighbors, dtype=np.intp).reshape(rows.shape[0], -1)
        if neighbors.shape[1] < 1:
            raise ContractViolation('every row needs at least one neighbour')
        rows.setflags(write=False)
        neighbors.setflags(write=False)
        object.__setattr__(self, 'rows', rows)
        object.__setattr__(self, 'neighbors', neighbors)

    @property
    def m(self):
        return self.neighbors.shape[1]

    @property
    def weight(self):
        return 1.0 / self.m

    def neighbor_mean(self, values):
        """Weighted sum over the neighbours of each stored row."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n,):
            raise ContractViolation(f'values have shape {values.shape}, expected ({self.n},)')
        return (self.to_sparse() @ values)[self.rows]

    def to_sparse(self):
        data = np.full(self.neighbors.size, self.weight)
        indptr = np.zeros(self.n + 1, dtype=np.intp)
        counts = np.zeros(self.n, dtype=np.intp)
        counts[self.rows] = self.m
        np.cumsum(counts, out=indptr[1:])
        # csr wants row-sorted storage
        order = np.argsort(self.rows, kind='stable')
        indices = self.neighbors[order].ravel()
        return sparse.csr_matrix((data, indices, indptr), shape=(self.n, self.n))

    def __repr__(self) -> str:
        return f'<NeighborWeights n: {self.n} rows: {self.rows.shape[0]} m: {self.m}>'


def _exact_distances(points, origin, candidates):
    diff = points[candidates] - points[origin][..., None, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _ordered(candidates, distances):
    order = np.lexsort((candidates, distances), axis=-1)
    return (np.take_along_axis(candidates, order, axis=-1),
            np.take_along_axis(distances, order, axis=-1))


def nearest_neighbors(points, m):
    """Positions of the m closest other points for every point.

    Distances are Euclidean, ties go to the smaller position. With fewer
    than m + 1 points every point is matched to all the others.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    count = points.shape[0]
    if not np.all(np.isfinite(points)):
        raise DivergenceError(f'{int(np.sum(~np.isfinite(points).all(axis=1)))} of {count} '
                              'points to match are not finite')
    if int(m) != m or m < 1:
        raise ContractViolation(f'number of neighbours must be a positive integer, got {m}')
    if count < 2:
        raise InsufficientDataError(f'nearest neighbours need at least 2 points, got {count}')
    m = min(int(m), count - 1)
    positions = np.arange(count)

    if m == count - 1:
        everyone = np.tile(positions, (count, 1))
        return everyone[~np.eye(count, dtype=bool)].reshape(count, m)

    tree = cKDTree(points)
    k = min(m + 2, count)
    _, found = tree.query(points, k=k)
    distances = _exact_distances(points, positions, found)
    distances[found == positions[:, None]] = np.inf
    found, distances = _ordered(found, distances)
    chosen = found[:, :m].copy()

    # the m-th and (m+1)-th candidates tie: the query may have cut the tie
    # arbitrarily, so rescan everything inside the radius
    for row in np.flatnonzero(distances[:, m - 1] == distances[:, m]):
        radius = distances[row, m - 1]
        inside = np.asarray(tree.query_ball_point(points[row], radius * (1 + 1e-9) + 1e-300),
                            dtype=np.intp)
        inside = inside[inside != row]
        near, _ = _ordered(inside, _exact_distances(points, row, inside))
        chosen[row] = near[:m]
    return chosen


def _as_points(pairs):
    if len(pairs) and isinstance(pairs[0], IndexPair):
        return np.array([(p.z_index, p.x_index) for p in pairs], dtype=float)
    points = np.asarray(pairs, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ContractViolation(f'index pairs must have shape (n, 2), got {points.shape}')
    return points


def knn_weights(pairs, selected, m=config.NEIGHBORS):
    """m-nearest-neighbour weights among selected observations in the index plane."""
    points = _as_points(pairs)
    selected = np.asarray(selected).astype(bool)
    if selected.shape != (points.shape[0],):
        raise ContractViolation(
            f'selection mask has shape {selected.shape}, expected ({points.shape[0]},)')
    rows = np.flatnonzero(selected)
    if rows.shape[0] < 2:
        raise InsufficientDataError(
            f'matching needs at least 2 selected observations, got {rows.shape[0]}')
    if rows.shape[0] < m + 1:
        log.debug('only %d selected observations for m=%d', rows.shape[0], m)
    local = nearest_neighbors(points[rows], m)
    return NeighborWeights(points.shape[0], rows, rows[local])


#----------------------------------------------------------------------------#
# Matching termination.
#----------------------------------------------------------------------------#

@dataclass(frozen=True)
class MatchingTermination:
    stability_rounds: int = config.STABILITY_ROUNDS
    max_iterations: int = config.MAX_ITERATIONS

    def __post_init__(self):
        if self.stability_rounds < 1:
            raise ContractViolation('stability rounds must be at least 1')
        if self.max_iterations < 1:
            raise ContractViolation('iteration cap must be at least 1')

    def monitor(self):
        return HistoryStabilityMonitor(self.stability_rounds)


class HistoryStabilityMonitor:
    """Stops once the running componentwise max and min of all iterates
    seen so far have not moved for `rounds` consecutive updates."""

    def __init__(self, rounds):
        self.rounds = rounds
        self.high = None
        self.low = None
        self.quiet = 0

    def update(self, iterate):
        iterate = np.asarray(iterate, dtype=float)
        if self.high is None:
            self.high = iterate.copy()
            self.low = iterate.copy()
            return False
        high = np.maximum(self.high, iterate)
        low = np.minimum(self.low, iterate)
        if np.array_equal(high, self.high) and np.array_equal(low, self.low):
            self.quiet += 1
        else:
            self.quiet = 0
            self.high, self.low = high, low
        return self.quiet >= self.rounds
