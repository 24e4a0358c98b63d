"""
Error types for the switchback toolkit.

Every error carries a stable machine-readable code so the CLI can emit a
JSON error record and a nonzero exit status.
"""

from __future__ import annotations

from typing import Any, Dict, Optional


class SwitchbackError(Exception):
    """Base class for all domain errors raised by the package."""

    code = "switchback_error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {"error": self.code, "message": self.message, "details": self.details}


class InvalidInputError(SwitchbackError, ValueError):
    code = "invalid_input"


class ConsistencyError(SwitchbackError):
    code = "consistency"


class OutOfRangeError(SwitchbackError, IndexError):
    code = "out_of_range"


class NonMixingError(SwitchbackError):
    code = "non_mixing"


class NonErgodicError(NonMixingError):
    code = "non_ergodic"


class InsufficientReplicatesError(SwitchbackError):
    code = "insufficient_replicates"
