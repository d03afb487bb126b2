"""Exception hierarchy shared by every module of the package."""


class CrossRegError(Exception):
    """Base class for all errors raised by crossreg."""


class ParameterError(CrossRegError, ValueError):
    """An argument is outside its documented domain."""


class ShapeError(CrossRegError, ValueError):
    """Grid dimensions of two inputs are inconsistent or degenerate."""


class NumericalFailure(CrossRegError, RuntimeError):
    """The optimizer produced a non-finite objective.

    The loss trace recorded up to the failure is kept on ``trace`` and the
    last finite fields on ``phi_fwd``/``phi_bwd`` so callers can persist them.
    """

    def __init__(self, message, trace=None, phi_fwd=None, phi_bwd=None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.phi_fwd = phi_fwd
        self.phi_bwd = phi_bwd


class FormatError(CrossRegError, ValueError):
    """A file does not follow the expected on-disk layout.

    ``field`` names the header field or section that failed validation.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class BadMagicError(FormatError):
    pass


class UnsupportedVariantError(FormatError):
    pass


class UnsupportedDatatypeError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass
