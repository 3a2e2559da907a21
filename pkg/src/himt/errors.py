"""Exception hierarchy. The CLI prints the class name as the error kind."""


class HimtError(Exception):
    pass


class ShapeError(HimtError, ValueError):
    pass


class NumericError(HimtError, ArithmeticError):
    pass


class ContractError(HimtError, ValueError):
    """A precondition of an operation was violated."""


class DeterminismError(HimtError, RuntimeError):
    pass


class FormatError(HimtError, ValueError):
    pass


class PathError(HimtError, FileNotFoundError):
    pass


class FitError(HimtError, ValueError):
    pass


class MetricError(HimtError, ValueError):
    pass


class ConfigError(HimtError, ValueError):
    pass


class TrainingError(HimtError, RuntimeError):
    pass
