"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class ContractError(ValueError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(ValueError):
    """A configuration key or value is invalid."""


class LoadError(ValueError):
    """A dataset or checkpoint file failed to parse or validate."""
