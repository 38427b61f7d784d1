"""Exception hierarchy for the mllp package."""

from __future__ import annotations


class MllpError(Exception):
    """Base class for all package errors."""


class InvalidTableError(MllpError, ValueError):
    """A probability table violates its contract (shape, positivity, sum)."""


class SpecError(MllpError, ValueError):
    """An effect/margin collection violates its contract or format."""


class IncompleteSpecError(SpecError):
    """Operation requires a complete collection but got an incomplete one."""


class StructureError(MllpError, ValueError):
    """A structural precondition of a rule or solver is not met."""


class SolverError(MllpError, RuntimeError):
    """A solve failed.  ``kind`` is a machine-readable failure code and
    ``trace`` carries the residual history (one float per iteration)."""

    def __init__(self, kind: str, message: str, trace: list[float] | None = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.trace = trace or []


NON_CONVERGENCE = "NON_CONVERGENCE"
DIVERGENCE = "DIVERGENCE"
ALL_METHODS_FAILED = "ALL_METHODS_FAILED"
INCONSISTENT_MARGINS = "INCONSISTENT_MARGINS"
