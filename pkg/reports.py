import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from babel.numbers import format_decimal

import config

log = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ['method', 'coefficient', 'estimate', 'status']
MC_COLUMNS = ['method', 'coefficient', 'bias', 'rmse', 'time_seconds']


def format_number(value, digits=4):
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return '-'
    return format_decimal(value, format='0.' + '0' * digits, locale='en')


def coefficient_names(p_z, p_x):
    return ([f'delta_{j}' for j in range(1, p_z + 1)],
            [f'beta_{j}' for j in range(1, p_x + 1)])


#----------------------------------------------------------------------------#
# Point estimates.
#----------------------------------------------------------------------------#

@dataclass(frozen=True, eq=False)
class MethodEstimate:
    method: str
    delta: np.ndarray = None
    beta: np.ndarray = None
    status: str = 'converged'
    error: str = None

    @property
    def failed(self):
        return self.error is not None


def estimate_frame(estimates, p_z, p_x):
    delta_names, beta_names = coefficient_names(p_z, p_x)
    rows = []
    for est in estimates:
        if est.failed:
            for name in delta_names + beta_names:
                rows.append({'method': est.method, 'coefficient': name,
                             'estimate': np.nan, 'status': f'failed: {est.error}'})
            continue
        for name, value in zip(delta_names + beta_names, np.concatenate((est.delta, est.beta))):
            rows.append({'method': est.method, 'coefficient': name,
                         'estimate': float(value), 'status': est.status})
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)


def estimate_table(estimates, p_z, p_x):
    """Aligned text: one column per method, Selection and Outcome blocks."""
    delta_names, beta_names = coefficient_names(p_z, p_x)
    methods = [est.method for est in estimates]
    width = max([12] + [len(m) + 2 for m in methods])
    lines = ['Estimation Results', '']
    header = f'{"":<12}' + ''.join(f'{m:>{width}}' for m in methods)

    def block(title, names, pick):
        lines.append(title)
        lines.append(header)
        for j, name in enumerate(names):
            cells = []
            for est in estimates:
                value = None if est.failed else pick(est)[j]
                cells.append(f'{format_number(value):>{width}}')
            lines.append(f'{name:<12}' + ''.join(cells))
        lines.append('')

    block('Selection', delta_names, lambda est: est.delta)
    block('Outcome', beta_names, lambda est: est.beta)
    lines.append(f'{"status":<12}' + ''.join(
        f'{("failed" if est.failed else est.status):>{width}}' for est in estimates))
    return '\n'.join(lines) + '\n'


def write_estimate_report(estimates, p_z, p_x, csv_path, text_path=None):
    estimate_frame(estimates, p_z, p_x).to_csv(csv_path, index=False, float_format='%.17g')
    if text_path:
        with open(text_path, 'w', encoding='utf-8') as handle:
            handle.write(estimate_table(estimates, p_z, p_x))
    log.info('estimate report written to %s', csv_path)


#----------------------------------------------------------------------------#
# Monte Carlo.
#----------------------------------------------------------------------------#

def mc_frame(report):
    delta_names, beta_names = coefficient_names(report.spec.p_z, report.spec.p_x)
    rows = []
    for summary in report.methods.values():
        pairs = list(zip(delta_names, summary.bias_delta, summary.rmse_delta))
        pairs += list(zip(beta_names, summary.bias_beta, summary.rmse_beta))
        for name, bias, rmse in pairs:
            rows.append({'method': summary.label, 'coefficient': name, 'bias': float(bias),
                         'rmse': float(rmse), 'time_seconds': summary.seconds})
        rows.append({'method': summary.label, 'coefficient': 'aggregate_delta',
                     'bias': summary.agg_bias_delta, 'rmse': summary.agg_rmse_delta,
                     'time_seconds': summary.seconds})
        rows.append({'method': summary.label, 'coefficient': 'aggregate_beta',
                     'bias': summary.agg_bias_beta, 'rmse': summary.agg_rmse_beta,
                     'time_seconds': summary.seconds})
    return pd.DataFrame(rows, columns=MC_COLUMNS)


def mc_table(report, display=config.DISPLAY_COEFFICIENTS):
    spec = report.spec
    lines = [f'Finite Sample Performance (n = {spec.n}, p_z = {spec.p_z}, p_x = {spec.p_x}, '
             f'{spec.error_law.value} errors, {report.replications} replications, '
             f'{report.aggregate_mode} aggregates)', '']
    lines.append(f'{"Method":<10}' + ''.join(
        f'{h:>10}' for h in ('B-delta', 'R-delta', 'B-beta', 'R-beta', 'Time', 'Failed')))
    for s in report.methods.values():
        lines.append(f'{s.label:<10}' + ''.join(
            f'{format_number(v):>10}' for v in (s.agg_bias_delta, s.agg_rmse_delta,
                                                s.agg_bias_beta, s.agg_rmse_beta, s.seconds))
            + f'{s.failures:>10}')
    lines.append('')

    delta_names, beta_names = coefficient_names(spec.p_z, spec.p_x)
    for title, names, values_of in (
            ('Bias', delta_names, lambda s: s.bias_delta),
            ('Bias', beta_names, lambda s: s.bias_beta),
            ('RMSE', delta_names, lambda s: s.rmse_delta),
            ('RMSE', beta_names, lambda s: s.rmse_beta)):
        if not names:
            continue
        lines.append(f'{title:<10}' + ''.join(f'{name:>10}' for name in names[:display]))
        for s in report.methods.values():
            lines.append(f'{s.label:<10}' + ''.join(
                f'{format_number(float(v)):>10}' for v in values_of(s)[:display]))
        lines.append('')
    return '\n'.join(lines)


def write_mc_report(report, csv_path, text_path=None, display=config.DISPLAY_COEFFICIENTS):
    mc_frame(report).to_csv(csv_path, index=False, float_format='%.17g')
    if text_path:
        with open(text_path, 'w', encoding='utf-8') as handle:
            handle.write(mc_table(report, display))
    log.info('Monte Carlo report written to %s', csv_path)
