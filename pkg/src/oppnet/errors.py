"""Exception types shared across the toolkit."""


class ContractError(ValueError):
    """An operation was called with arguments violating its shape or value contract."""


class ParameterError(ValueError):
    """A parameter is outside its documented range."""


class NumericHealthError(ArithmeticError):
    """An operation produced NaN or Inf."""


class DomainError(ValueError):
    """A quantity left the domain of the function evaluated on it (e.g. log of a
    non-positive time average)."""


class IngestError(ValueError):
    """An input file is structurally valid but missing required content."""


class GraphmlParseError(ValueError):
    """A GraphML document could not be parsed as XML."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class DivergenceError(RuntimeError):
    """An iterative solver diverged (NaN or unbounded objective)."""

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class SchemaError(ValueError):
    """A configuration document failed validation."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class CheckpointError(ValueError):
    """A checkpoint file is malformed or incompatible with the requested use."""
