"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class ParseError(ValueError):
    """A file could not be decoded; the message names the file and offset."""


class ConfigError(ValueError):
    """A configuration key or value is invalid."""
