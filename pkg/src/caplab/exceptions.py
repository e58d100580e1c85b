"""Error types shared across the package.

The CLI maps these onto process exit codes: UsageError -> 2,
DataError (and subclasses) -> 3, anything else -> 4.
"""


class CaplabError(Exception):
    """Base class for all package errors."""


class UsageError(CaplabError):
    """Bad invocation: unknown flag combinations, invalid option values."""


class DataError(CaplabError):
    """User-supplied data is missing, malformed, or inconsistent."""


class ParseError(DataError):
    """A text input failed to parse; message names the offending line."""


class FormatError(DataError):
    """A binary input does not follow its declared layout."""


class CorruptionError(FormatError):
    """A binary input follows the layout but its sizes do not add up."""


class VersionError(FormatError):
    """A file declares a format version this code does not read."""


class NotFittedError(CaplabError, AttributeError):
    """Estimator method requiring a fit was called before fit."""
