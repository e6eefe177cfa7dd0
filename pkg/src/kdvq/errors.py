"""Exception types raised by the toolkit.

Each numeric failure carries the name of the violated invariant so the CLI can
report it verbatim.
"""


class KdvqError(Exception):
    """Base class; ``invariant`` names the condition that failed."""

    invariant = "unspecified"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details


class DiffeoDegenerateError(KdvqError):
    invariant = "diffeo-slope-bound"


class DomainError(KdvqError):
    invariant = "quadraticity-radius"


class ReductionDomainError(KdvqError):
    invariant = "reduction-smallness"


class StructuralError(KdvqError):
    invariant = "zero-mean-structure"


class SmallnessError(KdvqError):
    invariant = "neumann-smallness"


class SolverStagnationError(KdvqError):
    invariant = "picard-convergence"


class ObservabilityError(KdvqError):
    invariant = "gramian-coercivity"


class DivergenceError(KdvqError):
    invariant = "nash-moser-small-data"


class GridMismatchError(KdvqError):
    invariant = "shared-grid"


class ConfigError(KdvqError):
    invariant = "config"


class IdentityError(KdvqError):
    invariant = "nash-moser-identity"
