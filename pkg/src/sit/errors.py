class SitError(Exception):
    """Base class for every error raised by this package."""


class SitIOError(SitError, OSError):
    """An I/O failure while reading evidence or writing outputs."""
