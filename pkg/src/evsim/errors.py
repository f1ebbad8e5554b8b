"""Exception types shared across the package."""


class EvsimError(Exception):
    """Base class for all package errors."""


class FormatError(EvsimError):
    """A file does not conform to one of the binary formats."""


class BadMagicError(FormatError):
    """File starts with the wrong magic bytes."""


class TruncatedFileError(FormatError):
    """File ends in the middle of a header or record.

    Attributes:
        offset: byte offset at which the truncation was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class PolarityError(FormatError):
    """An event record carries a polarity outside {+1, -1}."""


class CheckpointError(EvsimError):
    """A checkpoint file is corrupt or does not match the target network."""


class ConfigError(EvsimError):
    """A run configuration is malformed (unknown keys, bad values)."""
