"""Exception hierarchy shared by all pipeline stages."""


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class InsufficientSamplingError(DomainError):
    pass


class UndefinedPhaseError(DomainError):
    """A 2w phase was requested where the oscillation amplitude vanishes."""


class GaugeError(DomainError):
    """Gauge-dependent quantity requested without (or with an invalid) calibration."""


class DependencyError(DomainError):
    pass


class NonConvergenceError(RuntimeError):
    """Every multi-start run of the global fit diverged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
