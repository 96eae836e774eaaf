"""Exception hierarchy shared by every pipeline stage.

Each class carries the CLI exit code it maps to (1 validation, 2 I/O,
3 numeric failure).
"""


class ProgspaceError(Exception):
    exit_code = 1


class ValidationError(ProgspaceError, ValueError):
    exit_code = 1


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConflictError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class PreconditionError(ValidationError):
    pass


class UnimputableError(ValidationError):
    pass


class DegenerateInputError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericError(ProgspaceError, ArithmeticError):
    exit_code = 3


class StorageError(ProgspaceError, OSError):
    exit_code = 2
