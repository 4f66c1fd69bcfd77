"""Exception types shared across the package.

Every error raised intentionally by this package derives from SpsrError so
the CLI can map them to exit codes (config problems -> 3, runtime -> 1).
"""


class SpsrError(Exception):
    """Base class for all structured errors raised by this package."""


class ConfigError(SpsrError):
    """A configuration value violates one of its documented constraints."""


class ShapeError(SpsrError):
    """An input tensor has the wrong shape for the requested operation."""


class DataError(SpsrError):
    """Dataset is missing, empty, or otherwise unusable."""


class CheckpointError(SpsrError):
    """Checkpoint file is missing tensors or has mismatched shapes."""


class PluginMissingError(SpsrError):
    """An external-metric plugin was requested but never registered."""


class DivergenceError(SpsrError):
    """Training produced a non-finite loss; the message names the term."""
