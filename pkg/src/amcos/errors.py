"""Exception types shared across the package."""


class AmcosError(Exception):
    """Base class for package errors."""


class NewtonDiverged(AmcosError):
    """Exercise-point polishing failed to reach the requested tolerance."""


class DomainError(AmcosError):
    """An input lies outside the mathematical domain of the operation."""


class NonPositiveTimeValue(AmcosError):
    """Option price does not exceed its intrinsic value; the log time value
    is undefined and the sample belongs to the stopping region."""


class StoppingRegionInput(AmcosError):
    """Implied-volatility inversion was requested for a quote in (or at) the
    early-exercise region, where the inverse map is not defined."""


class DivergenceDetected(AmcosError):
    """Training loss became non-finite."""


class FormatError(AmcosError):
    """A weight file or data file does not match the expected schema."""
