import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

import config
from errors import ContractViolation, SellabError
from matching import MatchingTermination
from models import Dataset, outcome_index, selection_index
from multichoice import ChoiceDataset
from parametric import OptimizerConfig, bivariate_normal_cdf, joint_mle, two_step_nls
from stage1 import GdConfig, matching_first_stage, sbgd_first_stage
from stage2 import matching_estimate, sieve_estimate

log = logging.getLogger(__name__)

#----------------------------------------------------------------------------#
# Designs.
#----------------------------------------------------------------------------#

class ErrorLaw(Enum):
    NORMAL = 'normal'
    CAUCHY = 'cauchy'


def alternating_coefficients(p):
    return np.array([(-1.0) ** j for j in range(p)]) / math.sqrt(p) if p else np.zeros(0)


####################################################################
# NOTE:
# Regressors are iid Uniform[0, 1]. Errors follow
#   U = eta,  V = 0.5 * eta + sqrt(0.75) * e
# with eta, e iid N(0, 1) (normal design) or standard Cauchy.
# fixed_z0 / fixed_x0 replace the uniform draw of z0 / x0
# by a constant. index_scale multiplies both latent indices
# (the errors keep unit scale).
####################################################################

@dataclass(frozen=True)
class DgpSpec:
    n: int = config.N
    p_z: int = config.P_Z
    p_x: int = config.P_X
    true_delta: tuple = None
    true_beta: tuple = None
    error_law: ErrorLaw = ErrorLaw.NORMAL
    seed: int = config.SEED
    fixed_z0: float = None
    fixed_x0: float = None
    index_scale: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ContractViolation('n must be at least 1')
        if not self.index_scale > 0:
            raise ContractViolation('index scale must be positive')
        if self.p_z < 0 or self.p_x < 0:
            raise ContractViolation('regressor counts must be nonnegative')
        object.__setattr__(self, 'error_law', ErrorLaw(self.error_law))
        if self.true_delta is not None and len(self.true_delta) != self.p_z:
            raise ContractViolation(f'true delta has {len(self.true_delta)} entries, p_z={self.p_z}')
        if self.true_beta is not None and len(self.true_beta) != self.p_x:
            raise ContractViolation(f'true beta has {len(self.true_beta)} entries, p_x={self.p_x}')

    @property
    def delta(self):
        if self.true_delta is None:
            return alternating_coefficients(self.p_z)
        return np.asarray(self.true_delta, dtype=float)

    @property
    def beta(self):
        if self.true_beta is None:
            return alternating_coefficients(self.p_x)
        return np.asarray(self.true_beta, dtype=float)

    @property
    def truth(self):
        return np.concatenate((self.delta, self.beta))

    def replication(self, rep):
        return dataclasses.replace(self, seed=self.seed + rep)


def draw_errors(rng, n, law):
    draw = rng.standard_normal if law is ErrorLaw.NORMAL else rng.standard_cauchy
    eta = draw(n)
    noise = draw(n)
    return eta, 0.5 * eta + math.sqrt(0.75) * noise


def generate_dataset(spec):
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    z0 = rng.uniform(size=n)
    Z = rng.uniform(size=(n, spec.p_z))
    x0 = rng.uniform(size=n)
    X = rng.uniform(size=(n, spec.p_x))
    if spec.fixed_z0 is not None:
        z0 = np.full(n, float(spec.fixed_z0))
    if spec.fixed_x0 is not None:
        x0 = np.full(n, float(spec.fixed_x0))
    U, V = draw_errors(rng, n, spec.error_law)

    s = spec.index_scale
    D = (s * (z0 + Z @ spec.delta) - U > 0).astype(np.int8)
    latent = (s * (x0 + X @ spec.beta) - V > 0).astype(float)
    Y = np.where(D == 1, latent, np.nan)
    return Dataset(z0, Z, x0, X, D, Y)


def oracle_G(spec):
    """P(Y = 1 | D = 1, indices) as a function of the two true indices."""
    if spec.error_law is not ErrorLaw.NORMAL:
        raise ContractViolation(f'no closed-form G for the {spec.error_law.value} design')

    s = spec.index_scale

    def G(u, v):
        u, v = s * np.asarray(u, dtype=float), s * np.asarray(v, dtype=float)
        return bivariate_normal_cdf(u, v, 0.5) / np.maximum(special.ndtr(u), config.PROB_FLOOR)
    return G


def true_indices(dataset, spec):
    return selection_index(dataset, spec.delta), outcome_index(dataset, spec.beta)


#----------------------------------------------------------------------------#
# Metrics.
#----------------------------------------------------------------------------#

def aggregate_metrics(estimates, truth, mode=config.AGGREGATE_MODE):
    """Per-coefficient bias and RMSE plus their across-component aggregates.

    mode 'total' sums |bias| and takes the root of the summed squared RMSE,
    mode 'mean' averages |bias| and RMSE over components.
    """
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float)
    if estimates.shape[0] == 0:
        raise ContractViolation('no estimates to aggregate')
    if estimates.shape[1] != truth.shape[0]:
        raise ContractViolation(
            f'estimates have {estimates.shape[1]} components, truth has {truth.shape[0]}')

    bias = estimates.mean(axis=0) - truth
    rmse = np.sqrt(np.mean((estimates - truth) ** 2, axis=0))
    if mode == 'total':
        return bias, rmse, float(np.sum(np.abs(bias))), float(np.sqrt(np.sum(rmse ** 2)))
    if mode == 'mean':
        return bias, rmse, float(np.mean(np.abs(bias))), float(np.mean(rmse))
    raise ContractViolation(f"unknown aggregate mode {mode!r}")


#----------------------------------------------------------------------------#
# Methods.
#----------------------------------------------------------------------------#

@dataclass(frozen=True)
class EstimatorOptions:
    first_stage: GdConfig = GdConfig()
    second_stage: GdConfig = GdConfig()
    termination: MatchingTermination = MatchingTermination()
    neighbors: int = config.NEIGHBORS
    optimizer: OptimizerConfig = OptimizerConfig()


def estimate_mle(dataset, options):
    fit = joint_mle(dataset, options.optimizer)
    return fit.delta, fit.beta


def estimate_nls(dataset, options):
    fit = two_step_nls(dataset, options.optimizer)
    return fit.delta, fit.beta


def estimate_matching(dataset, options):
    first = matching_first_stage(dataset, options.first_stage, options.termination,
                                 options.neighbors)
    second = matching_estimate(dataset, first, options.second_stage, options.termination,
                               options.neighbors)
    return first.delta, second.beta


def estimate_sieve(dataset, options):
    first = sbgd_first_stage(dataset, options.first_stage)
    second = sieve_estimate(dataset, first, options.second_stage)
    return first.delta, second.beta


@dataclass(frozen=True)
class MethodSpec:
    name: str
    estimator: object
    label: str = None

    @property
    def display(self):
        return self.label or self.name


METHODS = {
    'mle': MethodSpec('mle', estimate_mle, 'MLE'),
    'nls': MethodSpec('nls', estimate_nls, 'NLS'),
    'matching': MethodSpec('matching', estimate_matching, 'M-GD'),
    'sieve': MethodSpec('sieve', estimate_sieve, 'S-GD'),
}


def resolve_methods(methods):
    resolved = []
    for method in methods:
        if isinstance(method, MethodSpec):
            resolved.append(method)
        elif method in METHODS:
            resolved.append(METHODS[method])
        else:
            raise ContractViolation(f'unknown method {method!r}; choose from {sorted(METHODS)}')
    if not resolved:
        raise ContractViolation('no methods requested')
    return resolved


#----------------------------------------------------------------------------#
# Monte Carlo driver.
#----------------------------------------------------------------------------#

@dataclass(frozen=True)
class RunOutcome:
    method: str
    rep: int
    estimate: np.ndarray = None
    seconds: float = 0.0
    error: str = None


def _replicate(spec, methods, options, rep):
    # module level so the process pool can pickle it
    dataset = generate_dataset(spec.replication(rep))
    outcomes = []
    for method in methods:
        start = time.perf_counter()
        try:
            delta, beta = method.estimator(dataset, options)
            estimate = np.concatenate((np.asarray(delta, float), np.asarray(beta, float)))
            if not np.all(np.isfinite(estimate)):
                raise SellabError('non-finite estimate')
            outcomes.append(RunOutcome(method.name, rep, estimate, time.perf_counter() - start))
        except (SellabError, ArithmeticError, np.linalg.LinAlgError) as err:
            outcomes.append(RunOutcome(method.name, rep, None, time.perf_counter() - start,
                                       f'{type(err).__name__}: {err}'))
    return outcomes


@dataclass(frozen=True, eq=False)
class MethodSummary:
    name: str
    label: str
    bias_delta: np.ndarray
    rmse_delta: np.ndarray
    bias_beta: np.ndarray
    rmse_beta: np.ndarray
    agg_bias_delta: float
    agg_rmse_delta: float
    agg_bias_beta: float
    agg_rmse_beta: float
    seconds: float
    successes: int
    failures: int
    errors: tuple = ()

    @property
    def failed(self):
        return self.successes == 0

    def to_dico(self):
        return {
            "method": self.label,
            "B-delta": self.agg_bias_delta,
            "R-delta": self.agg_rmse_delta,
            "B-beta": self.agg_bias_beta,
            "R-beta": self.agg_rmse_beta,
            "Time": self.seconds,
            "successes": self.successes,
            "failures": self.failures,
        }


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    spec: DgpSpec
    replications: int
    methods: dict = field(default_factory=dict)
    aggregate_mode: str = config.AGGREGATE_MODE

    def __repr__(self) -> str:
        return (f'<MonteCarloReport n: {self.spec.n} reps: {self.replications} '
                f'methods: {list(self.methods)}>')


def _summarize(method, outcomes, spec, mode):
    done = [o for o in outcomes if o.error is None]
    errors = tuple(o.error for o in outcomes if o.error is not None)
    seconds = float(np.mean([o.seconds for o in outcomes])) if outcomes else 0.0
    if not done:
        log.error('method %s failed in every replication', method.name)
        nan_z = np.full(spec.p_z, np.nan)
        nan_x = np.full(spec.p_x, np.nan)
        return MethodSummary(method.name, method.display, nan_z, nan_z, nan_x, nan_x,
                             math.nan, math.nan, math.nan, math.nan, seconds,
                             0, len(outcomes), errors)
    if errors:
        log.warning('method %s: %d of %d replications failed and were excluded',
                    method.name, len(errors), len(outcomes))
    stacked = np.vstack([o.estimate for o in done])
    bias_d, rmse_d, b_d, r_d = aggregate_metrics(stacked[:, :spec.p_z], spec.delta, mode)
    bias_b, rmse_b, b_b, r_b = aggregate_metrics(stacked[:, spec.p_z:], spec.beta, mode)
    return MethodSummary(method.name, method.display, bias_d, rmse_d, bias_b, rmse_b,
                         b_d, r_d, b_b, r_b, seconds, len(done), len(errors), errors)


def run_monte_carlo(spec, methods=config.METHODS, reps=config.REPLICATIONS,
                    options=EstimatorOptions(), workers=1, mode=config.AGGREGATE_MODE):
    if reps < 1:
        raise ContractViolation('at least one replication is required')
    methods = resolve_methods(methods)
    log.info('Monte Carlo: n=%d p_z=%d p_x=%d law=%s reps=%d methods=%s workers=%d',
             spec.n, spec.p_z, spec.p_x, spec.error_law.value, reps,
             ','.join(m.name for m in methods), workers)

    by_rep = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(_replicate, spec, methods, options, rep): rep
                       for rep in range(reps)}
            for future in as_completed(futures):
                by_rep[futures[future]] = future.result()
    else:
        for rep in range(reps):
            by_rep[rep] = _replicate(spec, methods, options, rep)

    summaries = {}
    for method in methods:
        outcomes = [o for rep in range(reps) for o in by_rep[rep] if o.method == method.name]
        summaries[method.name] = _summarize(method, outcomes, spec, mode)
    return MonteCarloReport(spec, reps, summaries, mode)


#----------------------------------------------------------------------------#
# Choice design.
#----------------------------------------------------------------------------#

def generate_choice_dataset(n, beta, seed=config.SEED):
    """Two alternatives, utilities x_j' beta + e_j with iid logistic e_j."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    p = beta.shape[0]
    x1 = rng.standard_normal((n, p))
    x2 = rng.standard_normal((n, p))
    e1 = rng.logistic(size=n)
    e2 = rng.logistic(size=n)
    y1 = (x1 @ beta + e1 > x2 @ beta + e2).astype(np.int8)
    return ChoiceDataset(x1, x2, y1)
