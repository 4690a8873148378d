try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, fields
from enum import Enum

from wtforms import (BooleanField, FloatField, Form, IntegerField, SelectField,
                     SelectMultipleField, StringField)
from wtforms.validators import AnyOf, DataRequired, NumberRange, Optional, Regexp

import config
from datafiles import CsvSchema
from errors import ConfigError

# Implementing option sets as enumerations


class CommandChoice(Enum):
    SIMULATE = 'simulate'
    ESTIMATE = 'estimate'
    MC = 'mc'


class MethodChoice(Enum):
    MLE = 'mle'
    NLS = 'nls'
    MATCHING = 'matching'
    SIEVE = 'sieve'


class ErrorLawChoice(Enum):
    NORMAL = 'normal'
    CAUCHY = 'cauchy'


class WarmStartChoice(Enum):
    ZERO = 'zero'
    MLE = 'mle'


class EquationChoice(Enum):
    SELECTION = 'selection'
    OUTCOME = 'outcome'


def _choices(enum):
    return [(item.value, item.value) for item in enum]


#----------------------------------------------------------------------------#
# Run configuration.
#----------------------------------------------------------------------------#

@dataclass(frozen=True)
class RunConfig:
    command: str
    methods: tuple = config.METHODS
    learning_rate: float = config.LEARNING_RATE
    max_iterations: int = config.MAX_ITERATIONS
    tolerance: float = config.TOLERANCE
    sieve_order: object = config.SIEVE_ORDER
    stability_rounds: int = config.STABILITY_ROUNDS
    neighbors: int = config.NEIGHBORS
    restarts: int = config.RESTARTS
    seed: int = config.SEED
    n: int = config.N
    p_z: int = config.P_Z
    p_x: int = config.P_X
    error_law: str = config.ERROR_LAW
    reps: int = config.REPLICATIONS
    aggregate_mode: str = config.AGGREGATE_MODE
    input: str = None
    out: str = None
    standardize: bool = False
    binarize: bool = False
    normalization: tuple = ()
    selection_free: tuple = None
    outcome_free: tuple = None
    warm_start: str = 'zero'
    threads: int = config.THREADS

    def schema(self):
        chosen = {eq: (col, sign) for eq, col, sign in self.normalization}
        selection = chosen.get('selection', ('z0', 1.0))
        outcome = chosen.get('outcome', ('x0', 1.0))
        return CsvSchema(selection[0], self.selection_free, outcome[0], self.outcome_free,
                         selection_sign=selection[1], outcome_sign=outcome[1])


SETTINGS = tuple(f.name for f in fields(RunConfig) if f.name != 'command')


class RunConfigForm(Form):
    command = SelectField('command', validators=[DataRequired()],
                          choices=_choices(CommandChoice))
    methods = SelectMultipleField('methods', choices=_choices(MethodChoice))
    learning_rate = FloatField('learning_rate', validators=[NumberRange(min=1e-300)])
    max_iterations = IntegerField('max_iterations', validators=[NumberRange(min=1)])
    tolerance = FloatField('tolerance', validators=[NumberRange(min=1e-300)])
    sieve_order = StringField('sieve_order', validators=[
        Regexp(r'^(auto|\d+)$', message="sieve order must be 'auto' or a nonnegative integer")])
    stability_rounds = IntegerField('stability_rounds', validators=[NumberRange(min=1)])
    neighbors = IntegerField('neighbors', validators=[NumberRange(min=1)])
    restarts = IntegerField('restarts', validators=[NumberRange(min=0)])
    seed = IntegerField('seed', validators=[NumberRange(min=0)])
    n = IntegerField('n', validators=[NumberRange(min=1)])
    p_z = IntegerField('p_z', validators=[NumberRange(min=0)])
    p_x = IntegerField('p_x', validators=[NumberRange(min=0)])
    error_law = SelectField('error_law', choices=_choices(ErrorLawChoice))
    reps = IntegerField('reps', validators=[NumberRange(min=1)])
    aggregate_mode = StringField('aggregate_mode', validators=[AnyOf(['total', 'mean'])])
    input = StringField('input', validators=[Optional()])
    out = StringField('out', validators=[Optional()])
    standardize = BooleanField('standardize')
    binarize = BooleanField('binarize')
    warm_start = SelectField('warm_start', choices=_choices(WarmStartChoice))
    threads = IntegerField('threads', validators=[NumberRange(min=1)])


class NormalizationForm(Form):
    equation = SelectField('equation', choices=_choices(EquationChoice))
    column = StringField('column', validators=[DataRequired()])
    sign = FloatField('sign', validators=[AnyOf([1.0, -1.0])])


def _form_errors(form):
    return '; '.join(f'{name}: {", ".join(errs)}' for name, errs in form.errors.items())


#----------------------------------------------------------------------------#
# Layers: config.py defaults, TOML file, command-line flags.
#----------------------------------------------------------------------------#

def defaults_from_object(source=config):
    """Lowercased UPPERCASE attributes of `source` that name a run setting."""
    aliases = {'replications': 'reps'}
    found = {}
    for key in dir(source):
        if key.isupper():
            name = aliases.get(key.lower(), key.lower())
            if name in SETTINGS:
                found[name] = getattr(source, key)
    return found


def load_toml(path):
    try:
        with open(path, 'rb') as handle:
            settings = tomllib.load(handle)
    except OSError as err:
        raise ConfigError(f'cannot read config file {path}: {err}') from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f'config file {path} is not valid TOML: {err}') from err
    unknown = sorted(set(settings) - set(SETTINGS))
    if unknown:
        raise ConfigError(f'unknown keys in {path}: {", ".join(unknown)}')
    return settings


def parse_normalization(entry):
    """'equation:column:sign', e.g. 'selection:homecof:-1'."""
    if isinstance(entry, (list, tuple)):
        parts = list(entry)
    else:
        parts = str(entry).split(':')
    if len(parts) != 3:
        raise ConfigError(f'normalization {entry!r} must look like equation:column:sign')
    equation, column, sign = parts
    try:
        sign = float(sign)
    except ValueError:
        raise ConfigError(f'normalization sign {sign!r} is not a number') from None
    form = NormalizationForm(data={'equation': equation, 'column': column, 'sign': sign})
    if not form.validate():
        raise ConfigError(f'invalid normalization {entry!r}: {_form_errors(form)}')
    return equation, column, sign


def build_run_config(command, file_settings=None, overrides=None):
    settings = {f.name: f.default for f in fields(RunConfig) if f.name != 'command'}
    settings.update(defaults_from_object())
    for layer in (file_settings or {}, overrides or {}):
        settings.update({k: v for k, v in layer.items() if v is not None})
    unknown = sorted(set(settings) - set(SETTINGS))
    if unknown:
        raise ConfigError(f'unknown settings: {", ".join(unknown)}')

    methods = settings.get('methods', ())
    if isinstance(methods, str):
        methods = [m.strip() for m in methods.split(',') if m.strip()]
    settings['methods'] = tuple(methods)
    settings['sieve_order'] = str(settings.get('sieve_order', 'auto'))

    form = RunConfigForm(data={'command': command, **settings})
    if not form.validate():
        raise ConfigError(f'invalid configuration: {_form_errors(form)}')
    settings.update({k: v for k, v in form.data.items() if k != 'command'})
    settings['methods'] = tuple(settings['methods'])
    if not settings['methods'] and command != CommandChoice.SIMULATE.value:
        raise ConfigError('at least one method is required')

    normalization = tuple(parse_normalization(e) for e in settings.get('normalization', ()))
    equations = [eq for eq, _, _ in normalization]
    if len(set(equations)) != len(equations):
        raise ConfigError('each equation takes exactly one normalized column')
    if command == CommandChoice.ESTIMATE.value and not settings.get('input'):
        raise ConfigError('estimate needs --input')
    if not settings.get('out'):
        raise ConfigError(f'{command} needs --out')

    order = settings['sieve_order']
    settings['sieve_order'] = order if order == 'auto' else int(order)
    settings['normalization'] = normalization
    for key in ('selection_free', 'outcome_free'):
        if settings.get(key) is not None:
            settings[key] = tuple(settings[key])
    return RunConfig(command=command, **settings)
