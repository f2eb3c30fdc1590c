"""Exception types raised by fiekit."""


class FiekitError(Exception):
    """Base class for all fiekit errors."""


class DimensionError(FiekitError, ValueError):
    """Array shapes disagree with the declared model dimensions."""


class InfeasibleError(FiekitError, ValueError):
    """A requested construction has no solution (empty box, rho too small, ...)."""


class DesignError(FiekitError):
    """Observer design failed, e.g. because the pair (A, C) is not detectable."""


class UnsupportedError(FiekitError, NotImplementedError):
    """The requested mode exists but not for these dimensions."""


class ConfigError(FiekitError, ValueError):
    """Invalid run configuration. ``field`` names the offending entry."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message
