"""Exception hierarchy. CLI exit codes are attached to the base classes."""


class ReasonPathError(Exception):
    exit_code = 1


class UsageError(ReasonPathError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataIntegrityError(ReasonPathError):
    exit_code = 2


class ParseError(DataIntegrityError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IntegrityError(DataIntegrityError):
    pass


class FormatError(DataIntegrityError):
    """Binary file has a wrong magic string or is truncated."""


class OrderingError(DataIntegrityError):
    pass


class GenerationError(DataIntegrityError):
    pass


class NumericalError(ReasonPathError):
    exit_code = 3


class DivergenceError(NumericalError):
    pass
