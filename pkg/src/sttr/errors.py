"""Exception hierarchy shared by every module."""


class STTRError(Exception):
    """Base class for all library errors."""


class DimensionError(STTRError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(STTRError, ValueError):
    """Invalid hyper-parameter or network configuration."""


class TopologyError(STTRError, ValueError):
    """Skeleton graph violates its invariants."""


class ContractError(STTRError, RuntimeError):
    """An operation was called outside its documented contract."""


class NumericError(STTRError, ArithmeticError):
    """Non-finite values were encountered."""


class FormatError(STTRError, ValueError):
    """A data file is malformed (bad magic, version or truncated payload)."""


class CheckpointError(STTRError, ValueError):
    """A checkpoint cannot be applied to the model it is loaded into."""
