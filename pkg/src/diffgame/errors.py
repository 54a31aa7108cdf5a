"""Exception types shared across the package."""


class DiffgameError(Exception):
    """Base class for all package errors."""


class ExprSyntaxError(DiffgameError):
    """Malformed expression text; carries the offending position."""

    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ValidationError(DiffgameError):
    """A game document or runtime input violates a structural invariant."""


class ZeroProbabilityEvent(DiffgameError):
    """Conditioning on an event of probability zero."""


class NonConvergence(DiffgameError):
    """Solver failed to reach tolerance; carries the best iterate found."""

    def __init__(self, message, equilibrium=None, diagnostics=None):
        super().__init__(message)
        self.equilibrium = equilibrium
        self.diagnostics = diagnostics or {}


class SingularJacobian(DiffgameError):
    """The equilibrium Jacobian is numerically singular (fold/bifurcation)."""


class BranchJump(DiffgameError):
    """A finite-difference re-solve landed on a different equilibrium branch."""


class UndefinedValue(DiffgameError):
    """A ratio definition has a vanishing denominator for this input."""


class PreconditionFailed(DiffgameError):
    """A geometric precondition (e.g. nonempty dual cone) does not hold."""
