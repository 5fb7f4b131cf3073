"""Exception types raised across the package."""


class MRHError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(MRHError, ValueError):
    """A file or byte payload does not follow the expected layout."""


class InvariantError(MRHError, ValueError):
    """A value violates a documented type invariant."""


class ConfigError(MRHError, ValueError):
    """Incompatible or invalid configuration."""
