#----------------------------------------------------------------------------#
# Imports
#----------------------------------------------------------------------------#

import argparse
import logging
import os
import sys
from logging import FileHandler, Formatter, StreamHandler
from pathlib import Path

import numpy as np

import config
from datafiles import load_csv, write_csv
from errors import ConfigError, SellabError
from forms import CommandChoice, ErrorLawChoice, WarmStartChoice, build_run_config, load_toml
from matching import MatchingTermination
from models import ParameterPoint
from parametric import OptimizerConfig, joint_mle, two_step_nls
from reports import MethodEstimate, write_estimate_report, write_mc_report
from simlab import METHODS, DgpSpec, EstimatorOptions, generate_dataset, run_monte_carlo
from stage1 import GdConfig, matching_first_stage, sbgd_first_stage
from stage2 import matching_estimate, sieve_estimate

log = logging.getLogger('sellab')

#----------------------------------------------------------------------------#
# Logging.
#----------------------------------------------------------------------------#

_FORMAT = '%(asctime)s %(levelname)s: %(message)s [in %(pathname)s:%(lineno)d]'


def configure_logging(debug=config.DEBUG, log_file=config.LOG_FILE):
    root = logging.getLogger()
    if getattr(root, '_sellab_configured', False):
        return
    root.setLevel(logging.DEBUG if debug else logging.INFO)
    console = StreamHandler(sys.stderr)
    console.setFormatter(Formatter('%(levelname)s: %(message)s'))
    console.setLevel(logging.DEBUG if debug else logging.WARNING)
    root.addHandler(console)
    if not debug:
        file_handler = FileHandler(log_file)
        file_handler.setFormatter(Formatter(_FORMAT))
        file_handler.setLevel(logging.INFO)
        root.addHandler(file_handler)
    root._sellab_configured = True


#----------------------------------------------------------------------------#
# Run settings.
#----------------------------------------------------------------------------#

def resolve_threads(flag):
    if flag is not None:
        return flag
    env = os.environ.get(config.THREADS_ENV_VAR)
    if env is None or env == '':
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f'{config.THREADS_ENV_VAR} must be an integer, got {env!r}') from None


def dgp_spec(run):
    return DgpSpec(n=run.n, p_z=run.p_z, p_x=run.p_x, error_law=run.error_law, seed=run.seed)


def optimizer_config(run):
    return OptimizerConfig(restarts=run.restarts, seed=run.seed, workers=run.threads)


def gd_config(run, initial_guess=None):
    return GdConfig(learning_rate=run.learning_rate, max_iterations=run.max_iterations,
                    tolerance=run.tolerance, sieve_order=run.sieve_order,
                    initial_guess=None if initial_guess is None else tuple(initial_guess))


def estimator_options(run, delta0=None, beta0=None):
    return EstimatorOptions(
        first_stage=gd_config(run, delta0),
        second_stage=gd_config(run, beta0),
        termination=MatchingTermination(run.stability_rounds, run.max_iterations),
        neighbors=run.neighbors,
        optimizer=optimizer_config(run))


def text_path(out):
    return str(Path(out).with_suffix('.txt'))


#----------------------------------------------------------------------------#
# Commands.
#----------------------------------------------------------------------------#

def simulate(run):
    dataset = generate_dataset(dgp_spec(run))
    write_csv(dataset, run.out)
    print(f'{dataset!r} written to {run.out}')
    return 0


def _status(*fits):
    return 'converged' if all(fit.converged for fit in fits) else 'maxIter'


def _estimate_one(method, dataset, options, mle_fit=None):
    label = METHODS[method].display
    if method == 'mle':
        fit = mle_fit or joint_mle(dataset, options.optimizer)
        return MethodEstimate(label, fit.delta, fit.beta, fit.status.value)
    if method == 'nls':
        fit = two_step_nls(dataset, options.optimizer)
        return MethodEstimate(label, fit.delta, fit.beta, fit.status.value)
    if method == 'matching':
        first = matching_first_stage(dataset, options.first_stage, options.termination,
                                     options.neighbors)
        second = matching_estimate(dataset, first, options.second_stage, options.termination,
                                   options.neighbors)
        return MethodEstimate(label, first.delta, second.beta, _status(first, second))
    first = sbgd_first_stage(dataset, options.first_stage)
    second = sieve_estimate(dataset, first, options.second_stage)
    return MethodEstimate(label, first.delta, second.beta, _status(first, second))


def estimate(run):
    dataset = load_csv(run.input, run.schema(), standardize=run.standardize,
                       binarize=run.binarize)
    options = estimator_options(run)

    mle_fit = None
    if run.warm_start == WarmStartChoice.MLE.value:
        mle_fit = joint_mle(dataset, options.optimizer)
        start = ParameterPoint(mle_fit.delta, mle_fit.beta).check_against(dataset)
        log.info('warm start from MLE: %r', start)
        options = estimator_options(run, start.delta, start.beta)

    estimates = []
    for method in run.methods:
        error = False
        try:
            estimates.append(_estimate_one(method, dataset, options, mle_fit))
        except (SellabError, ArithmeticError, np.linalg.LinAlgError) as err:
            error = True
            log.error('method %s failed: %s', method, err)
            estimates.append(MethodEstimate(METHODS[method].display,
                                            error=f'{type(err).__name__}: {err}'))
        finally:
            if error:
                log.debug('%s', sys.exc_info())

    write_estimate_report(estimates, dataset.p_z, dataset.p_x, run.out, text_path(run.out))
    print(f'estimates for {", ".join(run.methods)} written to {run.out}')
    return 1 if any(est.failed for est in estimates) else 0


def monte_carlo(run):
    report = run_monte_carlo(dgp_spec(run), run.methods, run.reps, estimator_options(run),
                             workers=run.threads, mode=run.aggregate_mode)
    write_mc_report(report, run.out, text_path(run.out))
    print(f'Monte Carlo report ({run.reps} replications) written to {run.out}')
    return 1 if any(s.failed for s in report.methods.values()) else 0


COMMANDS = {
    CommandChoice.SIMULATE.value: simulate,
    CommandChoice.ESTIMATE.value: estimate,
    CommandChoice.MC.value: monte_carlo,
}


#----------------------------------------------------------------------------#
# Command line.
#----------------------------------------------------------------------------#

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='TOML file with run settings')
    common.add_argument('--threads', type=int,
                        help=f'worker processes (overrides ${config.THREADS_ENV_VAR})')
    common.add_argument('--seed', type=int)
    common.add_argument('--out', help='output CSV (a .txt table is written alongside)')
    common.add_argument('--methods', help='comma-separated: mle,nls,matching,sieve')
    common.add_argument('--sieve-order', dest='sieve_order', help="'auto' or an integer")
    common.add_argument('--neighbors', type=int)
    common.add_argument('--learning-rate', dest='learning_rate', type=float)
    common.add_argument('--max-iterations', dest='max_iterations', type=int)
    common.add_argument('--tolerance', type=float)
    common.add_argument('--stability-rounds', dest='stability_rounds', type=int)
    common.add_argument('--restarts', type=int)

    design = argparse.ArgumentParser(add_help=False)
    design.add_argument('--n', type=int)
    design.add_argument('--p-z', dest='p_z', type=int)
    design.add_argument('--p-x', dest='p_x', type=int)
    design.add_argument('--error-law', dest='error_law',
                        choices=[law.value for law in ErrorLawChoice])

    parser = argparse.ArgumentParser(
        prog='sellab', description='Estimation of binary choice models with selective labels.')
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('simulate', parents=[common, design],
                        help='write a simulated dataset CSV')

    est = commands.add_parser('estimate', parents=[common],
                              help='estimate coefficients on a dataset CSV')
    est.add_argument('--input', required=True)
    est.add_argument('--standardize', action='store_true', default=None)
    est.add_argument('--binarize', action='store_true', default=None,
                     help='binarize Y at its median among selected rows')
    est.add_argument('--normalize', dest='normalization', action='append',
                     metavar='EQUATION:COLUMN:SIGN')
    est.add_argument('--warm-start', dest='warm_start',
                     choices=[w.value for w in WarmStartChoice])

    mc = commands.add_parser('mc', parents=[common, design], help='run a Monte Carlo study')
    mc.add_argument('--reps', type=int)
    mc.add_argument('--aggregate-mode', dest='aggregate_mode', choices=['total', 'mean'])
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit:
        return exit.code

    overrides = {k: v for k, v in vars(args).items() if k not in ('command', 'config')}
    error = False
    code = 0
    try:
        overrides['threads'] = resolve_threads(args.threads)
        file_settings = load_toml(args.config) if args.config else {}
        run = build_run_config(args.command, file_settings, overrides)
        configure_logging()
        log.info('%s: %s', run.command, run)
        code = COMMANDS[run.command](run)
    except ConfigError as err:
        error = True
        code = 2
        print(f'sellab: usage error: {err}', file=sys.stderr)
    except SellabError as err:
        error = True
        code = 1
        log.error('%s failed: %s', args.command, err)
        print(f'sellab: {args.command} failed: {err}', file=sys.stderr)
    finally:
        if error:
            log.debug('%s', sys.exc_info())
    return code


#----------------------------------------------------------------------------#
# Launch.
#----------------------------------------------------------------------------#

if __name__ == '__main__':
    sys.exit(run_cli())
