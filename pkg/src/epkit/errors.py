"""Exception hierarchy shared by all solvers."""


class EpkitError(Exception):
    """Base class for every error raised by epkit."""


class NonFiniteResult(EpkitError):
    pass


class DegenerateSupport(EpkitError):
    """A tilted distribution has (numerically) no mass."""


class NotPositiveDefinite(EpkitError):
    pass


class OutOfRange(EpkitError):
    pass


class TooLarge(EpkitError):
    pass


class NotConverged(EpkitError):
    pass


class ZeroMessage(EpkitError):
    pass


class InnerSolverFailure(EpkitError):
    pass
