"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class InputError(ValueError):
    """A value lies outside the domain an operation accepts."""


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter."""


class ContractError(RuntimeError):
    """An API precondition was violated by the caller."""


class ParseError(ValueError):
    """Malformed binary input; ``offset`` is the byte position where parsing stopped."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
