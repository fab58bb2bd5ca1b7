"""
Exception hierarchy for pressure-lab.

Every error carries a short machine-readable context so the command line
surface can turn it into a JSON error report.
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for all pressure-lab errors."""

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> Dict[str, Any]:
        return {
            'type': type(self).__name__,
            'error': self.message,
            'context': {k: _jsonable(v) for k, v in self.context.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class ConfigError(LabError):
    """Malformed or inconsistent run configuration."""


# Inverse branches

class BranchError(LabError):
    """Failure while computing an inverse branch."""


class OmittedValue(BranchError):
    """The value is omitted (or asymptotic) and has no preimage on a sheet."""


class CriticalValueHit(BranchError):
    """The value is a critical value, so two sheets collide."""


class NonConvergence(BranchError):
    """Newton polishing of a preimage failed to meet the root tolerance."""


class BranchUndefined(BranchError):
    """A requested disc meets the singular set of the iterate."""


# Preimage trees

class TreeError(LabError):
    """Failure while expanding a preimage tree."""


class OmittedValueAtNode(TreeError):
    """A tree node has no preimages at all."""


class TreeBudgetExceeded(TreeError):
    """A tree level would exceed the configured node budget."""


# Pressure

class InsufficientDepth(LabError):
    """Too few levels to fit a growth rate."""


class TruncationError(LabError):
    """The estimated sheet tail is larger than the accepted bound."""


class DegenerateRestriction(LabError):
    """A restriction removes every endpoint at some depth."""


class NoStabilization(LabError):
    """Restricted pressures do not stabilise over the radius list."""

    def __init__(self, message: str, table: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.table = table


class BadBracket(LabError):
    """The Bowen bracket does not certify a sign change."""


class InconclusiveRegime(LabError):
    """Grid evidence is too thin or contradictory to label the regime."""


# Measures

class DegenerateNormalizer(LabError):
    """The Patterson-Sullivan normaliser underflowed or is not finite."""


class NonInjectiveTestSet(LabError):
    """A test disc could not be certified as an injectivity domain."""


class InfiniteMass(LabError):
    """Metric reweighting produced a non-normalisable measure."""


# Validators

class NonHyperbolicMap(LabError):
    """The operation requires hyperbolicity evidence that is missing."""


class TooFewCells(LabError):
    """Box counting kept too few cells at the finest scale."""

    def __init__(self, message: str, estimate: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.estimate = estimate
