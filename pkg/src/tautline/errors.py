"""Exception hierarchy shared by all tautline modules."""


class TautlineError(Exception):
    """Base class for every error raised by tautline."""


class InvalidParameter(TautlineError, ValueError):
    """A tuning parameter (beta, delta, eps, lambda, gamma, ...) is out of range."""


class InvalidData(TautlineError, ValueError):
    """Responses or design points are outside the support required by a model."""


class CoercivityError(TautlineError, ArithmeticError):
    """A pooled derivative never reaches the requested level.

    Raised by the generalized inverses when the loss is not coercive on the
    requested index range, so the minimizer does not exist.
    """


class NonCoerciveData(CoercivityError):
    """The data make the penalized likelihood non-coercive (e.g. constant labels)."""


class DegenerateRange(TautlineError, ValueError):
    """A strict range bound was requested for constant responses."""


class UnsupportedCertificate(TautlineError, TypeError):
    """The requested optimality certificate does not apply to this loss."""


class NonTermination(TautlineError, RuntimeError):
    """An iterative procedure exceeded its iteration guard."""
