"""Exception hierarchy shared by all ripening modules."""


class RipeningError(Exception):
    """Base class for every error raised by this package."""


class SystemExtinct(RipeningError):
    """No active particles (or zero density) remain, so no mean field exists."""


class DomainError(RipeningError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class RegimeError(DomainError):
    """Scale parameters outside the admissible regime alpha > 3/2 + epsilon."""


class StepRejected(RipeningError):
    """A time step failed its error or stability test.

    ``suggested_dt`` carries a step size the caller may retry with.
    """

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class CFLViolation(StepRejected):
    """The requested step exceeds the upwind stability limit."""


class DomainTooSmall(RipeningError):
    """Density reached the outer edge of the radius grid."""


class CapacityError(RipeningError):
    """A requested lattice would exceed the configured memory budget."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class NumericalFailure(RipeningError):
    """Time step underflow or a non-finite state during integration."""


class ConfigError(RipeningError, ValueError):
    """Invalid run configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
