"""Exception types raised by the solvers and the command line front end."""


class MuskatError(Exception):
    """Base class for every error raised by this package."""


class SingularZeroMode(MuskatError, ValueError):
    """A multiplier singular at the origin was applied to a field with a mean."""


class NegativeTime(MuskatError, ValueError):
    pass


class GridMismatch(MuskatError, ValueError):
    pass


class BlockOutOfRange(MuskatError, IndexError):
    pass


class DegeneratePath(MuskatError, ValueError):
    pass


class DenominatorTooSmall(MuskatError, ValueError):
    """``1 + |D|H`` dropped below the guard value somewhere in the strip."""


class SmallnessViolated(MuskatError, ValueError):
    """Interface too large for the perturbative solvers.

    ``index`` is the offending time node when the check runs over a path.
    """

    def __init__(self, message, value=None, threshold=None, index=None):
        super().__init__(message)
        self.value = value
        self.threshold = threshold
        self.index = index


class DataTooLarge(SmallnessViolated):
    pass


class NoConvergence(MuskatError, RuntimeError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


class FormMismatch(MuskatError, RuntimeError):
    """The split and direct two-phase right-hand sides disagree."""


class NotSPD(MuskatError, ValueError):
    pass


class PoorFit(MuskatError, RuntimeError):
    def __init__(self, message, slope=None, r2=None):
        super().__init__(message)
        self.slope = slope
        self.r2 = r2


class ConfigError(MuskatError, ValueError):
    pass
