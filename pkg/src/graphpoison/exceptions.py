"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GraphPoisonError(Exception):
    exit_code = 1


class ValidationError(GraphPoisonError, ValueError):
    """Input or intermediate object violates a structural invariant."""

    exit_code = 2


class ParseError(ValidationError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class StateError(ValidationError):
    """An edge flip does not match the adjacency it is applied to."""


class UsageError(ValidationError):
    pass


class UndefinedMetricError(ValidationError):
    pass


class SplitError(ValidationError):
    pass


class CapacityError(GraphPoisonError):
    """Not enough candidates to satisfy a request."""

    exit_code = 3


class ResourceError(GraphPoisonError, MemoryError):
    exit_code = 3

    def __init__(self, message, required_bytes=None):
        if required_bytes is not None:
            message = f"{message} (requires {required_bytes} bytes)"
        super().__init__(message)
        self.required_bytes = required_bytes


class SolverError(GraphPoisonError, ArithmeticError):
    exit_code = 4
