"""
Error types for didforge.

Every error carries a machine-readable ``code`` (the class name), an ``exit_code``
for the command line, and free-form structured context for ``error.json``.
"""

from typing import Any, Dict

EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class DidForgeError(Exception):
    """Base class for all library errors."""

    exit_code: int = EXIT_INPUT

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def code(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "context": _jsonable(self.context)}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


# --- input / validation (exit 2) ---

class InvalidConfig(DidForgeError):
    pass


class UnknownColumn(DidForgeError):
    pass


class MissingCell(DidForgeError):
    pass


class DuplicateRow(DidForgeError):
    pass


class NonConstantTimeInvariant(DidForgeError):
    pass


class AlreadyTreatedAtStart(DidForgeError):
    pass


class NotTwoPeriod(DidForgeError):
    pass


class EmptySubset(DidForgeError):
    pass


class EmptyComparison(DidForgeError):
    pass


class NoComparison(DidForgeError):
    pass


class UnknownFunction(DidForgeError):
    pass


class UnknownPreset(DidForgeError):
    pass


class ConfigMismatch(DidForgeError):
    pass


class OverlapConfigError(DidForgeError):
    pass


class TooFewDraws(DidForgeError):
    pass


class MissingNuisance(DidForgeError):
    pass


class NoEligibleGroup(DidForgeError):
    pass


# --- numerical failures (exit 3) ---

class NumericalError(DidForgeError):
    exit_code = EXIT_NUMERICAL


class RankDeficient(NumericalError):
    pass


class RankDeficientOR(RankDeficient):
    pass


class DegenerateDenominator(NumericalError):
    pass


class NoResidualTreatmentVariation(DegenerateDenominator):
    pass


class NoVariationInD(DegenerateDenominator):
    pass


class PerfectSeparation(NumericalError):
    pass


class OverlapViolation(NumericalError):
    pass


class PropensityNearOne(OverlapViolation):
    pass
