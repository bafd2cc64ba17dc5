"""Exception types raised by confdiv."""


class ConfDivError(Exception):
    """Base class for all library errors."""


class DomainError(ConfDivError, ValueError):
    """A point lies outside the open domain of a generator or mapping."""


class RangeError(ConfDivError, ValueError):
    """A value lies outside the image of a gradient or coordinate map."""


class NotInvertibleError(ConfDivError, ValueError):
    """The generator is not monotone on the sample hull."""


class StructureError(ConfDivError, ValueError):
    """The weight kind needs a coordinate structure that was not supplied."""


class StructureMismatch(ConfDivError, ValueError):
    """u differs from grad(phi) o v on a probe point."""

    def __init__(self, message, probe=None, residual=None):
        super().__init__(message)
        self.probe = probe
        self.residual = residual


class MappingMismatch(ConfDivError, ValueError):
    """Two structures do not share the mapping needed to compose them."""


class IncompatibleStructures(ConfDivError, ValueError):
    """The composed Jacobian is not symmetric positive definite."""

    def __init__(self, message, probe=None, residual=None):
        super().__init__(message)
        self.probe = probe
        self.residual = residual


class NonpositiveWeight(ConfDivError, ValueError):
    """A scale or sample weight is not strictly positive."""


class SignChangeError(ConfDivError, ValueError):
    """phi' changes sign on the sample hull."""


class DegenerateSample(ConfDivError, ValueError):
    """Every sample point coincides."""


class InvalidP(ConfDivError, ValueError):
    """The exponent does not correspond to an even dual norm order."""


class PreconditionError(ConfDivError, ValueError):
    """A documented precondition of an identity check does not hold."""


class EpsilonRange(ConfDivError, ValueError):
    """The contamination level is outside (0, 1 - tau)."""


class EmptyClusterError(ConfDivError, RuntimeError):
    """A cluster could not be refilled."""


class NoConvergence(ConfDivError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    ``best`` carries the best iterate found, when there is one.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
