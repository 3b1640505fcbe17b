class InvalidInputError(ValueError):
    """Arguments violate an operation's preconditions."""


class InstanceValidationError(ValueError):
    """A generated function left its declared range."""


class CalibrationError(ValueError):
    """No hard instance satisfies the requested calibration."""


class UnsupportedInstanceError(NotImplementedError):
    """The requested computation is not available for this instance."""


class FitError(ValueError):
    """Too few usable points for a rate fit."""
