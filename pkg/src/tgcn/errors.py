"""Exception hierarchy shared by every module."""


class TgcnError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(TgcnError, ValueError):
    """Operand shapes do not agree."""


class UnrecordedTensorError(TgcnError, LookupError):
    """Gradients were requested for a tensor the tape never recorded."""


class GraphError(TgcnError, ValueError):
    """Invalid adjacency matrix or node selection."""


class ConfigError(TgcnError, ValueError):
    """Invalid architecture, training or generator configuration."""


class FormatError(TgcnError, ValueError):
    """A model or dataset file is malformed."""


class ChecksumError(FormatError):
    """Stored checksum does not match the file contents (e.g. truncation)."""


class VersionError(FormatError):
    """File was written with an unsupported format version."""


class DivergenceError(TgcnError, ArithmeticError):
    """Training produced a non-finite loss."""
