"""
Exception hierarchy for ufcl-core.

Every operation raises one of these instead of a bare ValueError so callers
(the CLI, the experiment harness) can tell a bad parameter apart from a
degenerate input or a corrupt file.
"""


class UFCLError(Exception):
    """Base class for all ufcl-core errors."""


class DomainError(UFCLError, ValueError):
    """Input outside the mathematical domain (negative GEM input, p <= 0)."""


class ShapeError(UFCLError, ValueError):
    """Array dimensions do not match the parameters they are combined with."""


class DegenerateInputError(UFCLError, ValueError):
    """Input collapses the computation, e.g. normalizing a zero vector."""


class NumericError(UFCLError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ParameterError(UFCLError, ValueError):
    """A parameter violates its precondition."""


class ConfigError(ParameterError):
    """Configuration file or override could not be applied."""


class LookupFailedError(UFCLError, KeyError):
    """Requested cluster id is absent from a batch or bank."""


class FormatError(UFCLError, ValueError):
    """A data file could not be parsed.

    Attributes:
        path: File being parsed (if known)
        line: 1-based line number for text formats
        offset: Byte offset for binary formats
    """

    def __init__(self, message: str, path=None, line: int | None = None, offset: int | None = None):
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"offset {offset}")
        full = f"{message} ({', '.join(location)})" if location else message
        super().__init__(full)
        self.path = path
        self.line = line
        self.offset = offset


class StorageError(UFCLError, OSError):
    """Reading or writing run artifacts failed."""

    def __init__(self, message: str, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path
