"""Exception types shared across the package."""


class MstrError(Exception):
    pass


class DimensionError(MstrError, ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(MstrError, ValueError):
    """A hyperparameter combination cannot be realised (e.g. divisibility)."""


class ContractError(MstrError, RuntimeError):
    """An API precondition was violated by the caller."""


class FormatError(MstrError, ValueError):
    """A binary file does not match its declared layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(MstrError, RuntimeError):
    """Training produced a non-finite loss."""
