"""Exception hierarchy shared by every subpackage."""


class KddtError(Exception):
    pass


class DimensionError(KddtError, ValueError):
    """Operand shapes do not conform."""


class ConfigurationError(KddtError, ValueError):
    pass


class DomainError(KddtError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class InvariantError(KddtError, RuntimeError):
    pass


class VocabularyError(KddtError, IndexError):
    """Token id outside the vocabulary."""


class ParseError(KddtError, ValueError):
    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        self.offset = offset
        self.line = line
        where = ""
        if offset is not None:
            where = f" (byte offset {offset})"
        elif line is not None:
            where = f" (line {line})"
        super().__init__(message + where)


class UnsupportedFormatError(KddtError, ValueError):
    pass


class OrderingError(KddtError, ValueError):
    """Timestamps decrease within a stream."""


class ValidationError(KddtError, ValueError):
    pass


class DependencyError(KddtError, RuntimeError):
    """A pipeline stage ran before the stage it depends on."""
