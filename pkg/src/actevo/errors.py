"""Exception and warning types shared across the package."""


class ActevoError(Exception):
    """Base class for all package errors."""


class ParseError(ActevoError, ValueError):
    """A function string could not be turned into a graph.

    ``token`` and ``position`` identify the offending piece of input.
    """

    def __init__(self, message, token=None, position=None):
        self.token = token
        self.position = position
        if position is not None:
            message = f"{message} (token {token!r} at position {position})"
        super().__init__(message)


class GraphSyntaxError(ParseError):
    pass


class UnknownOperator(ParseError):
    pass


class ArityMismatch(ParseError):
    pass


class InvalidInterval(ActevoError, ValueError):
    pass


class EmptyPopulation(ActevoError, ValueError):
    pass


class InsufficientSamples(ActevoError, ValueError):
    pass


class QuadratureNonConvergence(ActevoError, ArithmeticError):
    def __init__(self, message, estimate=None, error=None):
        self.estimate = estimate
        self.error = error
        super().__init__(f"{message} (estimate={estimate!r}, error bound={error!r})")


class CyclicGraph(ActevoError, ValueError):
    pass


class NonFiniteMoments(ActevoError, ArithmeticError):
    def __init__(self, layer_id, moments):
        self.layer_id = layer_id
        self.moments = moments
        super().__init__(f"non-finite moments {moments} at layer {layer_id!r}")


class MalformedCsv(ActevoError, ValueError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(f"{message} (row {row}, column {column!r})")


class ConfigError(ActevoError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NonFiniteValue(RuntimeWarning):
    """An activation produced inf or nan (only possible with unsafe tables)."""


class ClassImbalanceWarning(UserWarning):
    pass


class SampleCountTooSmall(UserWarning):
    pass
