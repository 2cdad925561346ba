"""Exception hierarchy shared across the package.

Each top-level class maps to one CLI exit code (see :mod:`persona_align.cli`).
"""


class PersonaAlignError(Exception):
    """Base class for all package errors."""


class ConfigError(PersonaAlignError):
    pass


class DataError(PersonaAlignError):
    pass


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SizingError(DataError):
    pass


class OracleError(PersonaAlignError):
    pass


class ResponseFormatError(OracleError):
    def __init__(self, message, raw_text=""):
        super().__init__(message)
        self.raw_text = raw_text


class TransportError(OracleError):
    pass


class PersonaFormatError(OracleError):
    def __init__(self, message, factors=()):
        super().__init__(message)
        self.factors = tuple(factors)


class PersonaBatchError(OracleError):
    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = tuple(failures)


class EstimationError(PersonaAlignError):
    pass


class DegenerateEmbeddingError(EstimationError):
    pass


class StallError(EstimationError):
    pass
