"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: usage errors -> 2, config errors -> 3,
runtime/numerical faults -> 4.
"""


class DualStyleError(Exception):
    """Base class for all package errors."""


class DimensionError(DualStyleError):
    """Shape or length mismatch between tensors/vectors."""


class ConfigError(DualStyleError):
    """Invalid or inconsistent experiment configuration."""


class NumericalFault(DualStyleError):
    """A forward/backward pass produced non-finite values."""


class FormatError(DualStyleError):
    """Malformed file (image or checkpoint container)."""


class IntegrityError(FormatError):
    """Checksum or config-hash mismatch in a persisted file."""
