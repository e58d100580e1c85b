"""Error taxonomy, mirroring the decoder library's CLI conventions."""


class CapfeatError(Exception):
    """Base class for errors raised by this package."""


class UsageError(CapfeatError):
    """The caller asked for something invalid (unknown encoder, bad grid)."""


class DataError(CapfeatError):
    """Input images or model weights are missing, unreadable, or inconsistent."""
