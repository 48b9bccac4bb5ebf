# app/errors.py
from typing import Any, Dict, Optional


class CvhiError(Exception):
    """Base class for every failure raised by the toolkit."""


class InputError(CvhiError):
    """Malformed input: wrong dimension, bad file, contradictory components."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class EmptySetError(InputError):
    """A constraint set has no points."""


class InfeasibleAnchorError(InputError):
    """No point of dom(potential) ∩ constraint set could be found or the given anchor is outside it."""


class PreconditionError(CvhiError):
    """An operation was called on a candidate that violates its precondition."""


class NumericalError(CvhiError):
    """An inner numerical routine did not reach its tolerance."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class UnboundedSupportError(CvhiError):
    """The linear functional is unbounded above on the set."""


class UnsupportedEstimateError(CvhiError):
    """No closed-form growth estimate exists for this operator variant."""


class BoundUnavailableError(CvhiError):
    """No finite a-priori bound derivable from the declared coercivity data."""


class GridBudgetError(CvhiError):
    def __init__(self, message: str, suggested_step: float):
        self.suggested_step = suggested_step
        super().__init__(f"{message} (suggested grid step: {suggested_step:.3g})")


class NonConvergenceError(CvhiError):
    """An iteration ran out of budget; carries its best state."""

    def __init__(self, message: str, best: Any = None, best_gap: float = float("inf"), trace: Any = None):
        self.best = best
        self.best_gap = best_gap
        self.trace = trace
        super().__init__(message)


class CertificateError(CvhiError):
    """A stored or claimed certificate does not re-verify."""
