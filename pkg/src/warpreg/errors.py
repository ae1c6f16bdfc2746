"""Exception types raised across the package."""


class WarpregError(Exception):
    """Base class for all package errors."""


class DimensionError(WarpregError, ValueError):
    """Array shapes do not agree."""


class FormatError(WarpregError, ValueError):
    """A file does not follow the expected binary layout."""


class ConfigError(WarpregError, ValueError):
    """A configuration value violates its preconditions."""


class SpecError(ConfigError):
    """Warp parameters violate the invertibility bound."""


class DegenerateInputError(WarpregError, ValueError):
    """Input carries no usable signal (e.g. a constant image)."""
