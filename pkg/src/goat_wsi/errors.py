"""Exception types shared across the package."""


class GoatError(Exception):
    """Base class for all errors raised by goat_wsi."""


class DimensionError(GoatError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(GoatError):
    """A documented precondition was violated by the caller."""


class NumericsError(GoatError):
    """A forward computation produced NaN/Inf or an otherwise degenerate value."""


class FormatError(GoatError):
    """A file on disk does not match its declared format."""


class ValidationError(GoatError):
    """Loaded data violates a slide-bag invariant."""


class MetricUndefinedError(GoatError):
    """The requested metric is undefined on the given labels."""


class ConfigError(GoatError):
    """A configuration value or combination is invalid."""


class TrainingError(GoatError):
    """Training hit a non-recoverable state (non-finite gradient or loss)."""
