"""Exception hierarchy. CLI exit codes are attached to the top-level classes."""


class ModotError(Exception):
    exit_code = 1


class ConfigError(ModotError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    pass


class DataError(ModotError, OSError):
    exit_code = 3


class GenerationError(DataError):
    pass


class RangeError(DataError, ValueError):
    pass


class NumericError(ModotError, ArithmeticError):
    exit_code = 4


class DomainError(NumericError, ValueError):
    """Input outside the mathematical domain of a loss or metric."""


class UndefinedError(NumericError, ValueError):
    """Loss or metric requested over an empty pixel set."""


class FreezeError(ModotError, AssertionError):
    """Stage-one parameters changed while training the refinement stage."""

    exit_code = 4


class OracleError(ModotError, ArithmeticError):
    pass
