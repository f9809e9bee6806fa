"""Exception types shared across the package."""


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class UnsupportedOpError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


class ContractError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class FrozenClassError(RuntimeError):
    pass


class UnknownClassError(KeyError):
    pass


class CorruptCheckpointError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class PlacementError(RuntimeError):
    pass
