"""Exception hierarchy shared by all liftlab modules.

The CLI maps these onto process exit codes: instance problems (parse errors,
infeasible or oversized inputs) exit 1, numerical failures exit 2.
"""

from __future__ import annotations


class LiftLabError(Exception):
    """Base class for all liftlab errors."""


class InstanceError(LiftLabError):
    """Malformed or invalid problem instance (bad JSON, bad index, bad cost)."""


class InfeasibleError(LiftLabError):
    """The requested computation has no feasible answer (e.g. uncoverable universe)."""


class SizeLimitError(LiftLabError):
    """Input exceeds the documented desk-scale limit of an exact method."""


class GenerationError(LiftLabError):
    """Instance generator exhausted its retry budget without meeting its contract."""


class NumericalError(LiftLabError):
    """A solver stalled or produced output outside its declared tolerances."""


class BudgetError(LiftLabError):
    """An enumeration budget was exceeded before any usable answer was found."""
