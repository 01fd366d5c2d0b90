"""Exception hierarchy shared by all modules."""


class WavefrontLabError(Exception):
    """Base class for every error raised by the package."""


class DomainError(WavefrontLabError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NoRealRoots(WavefrontLabError):
    """The characteristic function has no real zero (speed below c_#)."""


class ConstructionError(WavefrontLabError, ValueError):
    """A birth function failed its structural validation."""


class NumericalFailure(WavefrontLabError):
    """NaN or other breakdown in a time-stepping loop."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class BlowUp(NumericalFailure):
    """Solution exceeded the configured blow-up threshold."""


class NoConvergence(WavefrontLabError):
    pass


class SpeedMismatch(WavefrontLabError):
    """Profile relaxation drifts: no front exists at the requested speed."""


class TailFitUnreliable(WavefrontLabError):
    pass


class NonPositiveField(WavefrontLabError, ValueError):
    pass


class NoCrossing(WavefrontLabError):
    pass


class NoMinimumInBracket(WavefrontLabError):
    pass


class InsufficientData(WavefrontLabError):
    pass


class NonPositiveValues(WavefrontLabError, ValueError):
    pass


class NoAdmissibleParams(WavefrontLabError):
    pass


class ParameterOutOfBudget(WavefrontLabError, ValueError):
    pass


class DegenerateProfile(WavefrontLabError):
    pass


class InitialDataOutsideEnvelope(WavefrontLabError):
    pass


class CertificationFailed(WavefrontLabError):
    pass


class ConfigError(WavefrontLabError):
    """Malformed or inconsistent experiment configuration."""

    def __init__(self, message, section=None, key=None):
        where = ".".join(p for p in (section, key) if p)
        super().__init__(f"{where}: {message}" if where else message)
        self.section = section
        self.key = key
