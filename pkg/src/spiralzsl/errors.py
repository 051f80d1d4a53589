"""Exception hierarchy shared across the package.

Data problems map to CLI exit code 2, numeric divergence to 3, usage to 1.
"""


class SpiralError(Exception):
    """Base class for all package errors."""


class ShapeError(SpiralError, ValueError):
    """Operands have incompatible shapes."""


class DegenerateVectorError(SpiralError, ValueError):
    """A vector that must have positive norm is (numerically) zero."""


class ContractViolationError(SpiralError, RuntimeError):
    """A caller broke an operation precondition (e.g. reselected a used group)."""


class OptimizerStateError(SpiralError, RuntimeError):
    """Optimizer invoked on parameters with missing gradients."""


class DivergenceError(SpiralError, ArithmeticError):
    """NaN/Inf appeared in gradients, losses or policy ratios."""


class DataError(SpiralError, ValueError):
    """Base class for ingestion problems (exit code 2)."""


class DataFormatError(DataError):
    """Bad magic, bad version or malformed text in a data file."""


class TruncatedPayloadError(DataError):
    """Header declares more payload than the file contains."""


class DuplicateClassError(DataError):
    """The same class id appears twice in an attribute matrix or split."""


class ZeroAttributeRowError(DataError):
    """A class attribute row is all-zero and unusable for cosine scoring."""


class SplitOverlapError(DataError):
    """Seen and unseen class sets intersect."""


class LabelMismatchError(DataError):
    """Feature labels reference classes missing from the split or attributes."""


class ConfigError(DataError):
    """A run-config key is unknown or has an invalid value."""


class UsageError(SpiralError):
    """Command line misuse (exit code 1)."""
