"""Exception hierarchy shared across the package."""


class MetaPolypError(Exception):
    """Base class for all package errors."""


class DimensionError(MetaPolypError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(MetaPolypError, ValueError):
    """A configuration object violates one of its invariants."""


class NumericalError(MetaPolypError, ArithmeticError):
    """An operation produced a non-finite value from finite inputs."""


class UsageError(MetaPolypError, RuntimeError):
    """An API was called outside its contract (e.g. backward on a non-scalar)."""


class CheckpointError(MetaPolypError, IOError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class VersionError(CheckpointError):
    """The checkpoint format version is not supported."""


class TruncatedError(CheckpointError):
    """The checkpoint file ends before all declared data was read."""


class NetpbmParseError(MetaPolypError, ValueError):
    """A Netpbm file is malformed; the message carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PairingError(MetaPolypError, ValueError):
    """An image file has no same-named mask file, or vice versa."""
