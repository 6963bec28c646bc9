"""Exception hierarchy shared across the package.

Every error raised deliberately by this package derives from EngineError so
callers can catch one base type. The CLI maps subtrees to exit codes:
configuration problems, malformed input files, and numerical failures are
reported differently to batch schedulers.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EngineError, ValueError):
    """A configuration value is out of its documented range."""


class ShapeError(EngineError, ValueError):
    """Array dimensions are incompatible. Messages carry both shapes."""


class DataFormatError(EngineError):
    """An input file does not conform to its documented layout."""


class ChecksumError(DataFormatError):
    """Stored integrity checksum does not match the file contents."""


class VersionError(DataFormatError):
    """The file declares a format version this build cannot read."""


class TruncatedFileError(DataFormatError):
    """The file ends before its declared payload does."""


class NumericalError(EngineError):
    """A non-finite value appeared where the math requires finite ones."""
