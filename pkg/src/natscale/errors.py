"""Exception types shared across the package."""


class NatscaleError(Exception):
    """Base class for all package-specific failures."""


class MeasureError(NatscaleError, ValueError):
    """Invalid speed-measure specification or out-of-domain query."""


class UndecidableTailError(MeasureError):
    """A tail first-moment verdict was requested but cannot be decided.

    Raised instead of guessing, e.g. for a tabulated density without a
    declared tail exponent whose samples span less than two decades.
    """


class ConvergenceError(NatscaleError, RuntimeError):
    """A series, ladder or extrapolation failed to converge."""


class SimulationError(NatscaleError, ValueError):
    """The measure or configuration does not admit path simulation."""


class AuditError(NatscaleError, RuntimeError):
    """Analytic criteria disagree; carries the full report as evidence.

    This is the package's primary self-test failure mode and should never
    trigger on a correctly solved measure.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
