"""Exception hierarchy shared by every module of the package."""


class SwarmIsacError(Exception):
    """Base class for all errors raised by swarm_isac.

    Errors raised inside the optimizer loop carry the failing iteration in
    ``iteration``.
    """

    iteration = None


class DegenerateGeometry(SwarmIsacError, ValueError):
    """A UAV sits closer than ``D_MIN`` to a user antenna.

    ``link`` holds the offending ``(uav, antenna)`` index pair when known.
    """

    def __init__(self, message, link=None):
        super().__init__(message)
        self.link = link


class SingularFim(SwarmIsacError, ValueError):
    """The Fisher information matrix is (numerically) singular."""

    def __init__(self, message, min_eigenvalue):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class NumericalFailure(SwarmIsacError, ArithmeticError):
    """A factorization or solve failed, usually because of non-finite input."""


class StepFailure(SwarmIsacError, ArithmeticError):
    """An optimizer step produced non-finite iterates (step size too large)."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ProtocolError(SwarmIsacError, RuntimeError):
    """Message-passing protocol violation (stale, missing or duplicate message)."""


class GenerationFailure(SwarmIsacError, RuntimeError):
    """Scenario generation could not satisfy its constraints."""
