class GCMError(Exception):
    """Base class for pipeline errors."""


class ConvergenceError(GCMError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = list(history or [])


class SingularityError(GCMError, ValueError):
    pass


class ExteriorDomainError(GCMError, ValueError):
    pass


class BandNotFoundError(GCMError):
    pass


class DivisionGuardError(GCMError, ZeroDivisionError):
    def __init__(self, message, samples=()):
        super().__init__(message)
        self.samples = list(samples)


class VanishingFieldError(GCMError):
    pass


class InvalidStateError(GCMError):
    pass


class SchemaError(GCMError, ValueError):
    pass


class UnitError(GCMError, ValueError):
    pass


class InversionAborted(GCMError):
    """Raised when a sub-step of the inversion fails; carries the log so far."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = list(log or [])
