class SellabError(Exception):
    """Base class for every error raised by the estimators and the CLI."""


class ContractViolation(SellabError, ValueError):
    pass


class InsufficientDataError(SellabError):
    pass


class SingularityError(SellabError):
    def __init__(self, message, dimension=None, rank=None, trace=None):
        super().__init__(message)
        self.dimension = dimension
        self.rank = rank
        self.trace = list(trace or [])


class DivergenceError(SellabError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class EstimationError(SellabError):
    pass


class SchemaError(SellabError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f'{message} (row {row})')
        self.row = row


class ConfigError(SellabError):
    pass
