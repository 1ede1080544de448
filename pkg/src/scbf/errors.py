"""Exception types shared across the package."""

from __future__ import annotations

__all__ = [
    "ScbfError",
    "UnsupportedRegimeError",
    "AssumptionViolationError",
    "NumericalBlowupError",
]


class ScbfError(Exception):
    """Base class for package-specific failures."""


class UnsupportedRegimeError(ScbfError):
    """A certificate or closed form was requested outside its validity range."""


class AssumptionViolationError(ScbfError):
    """A standing assumption on the model constants fails, so results would be meaningless."""


class NumericalBlowupError(ScbfError):
    """A coefficient became non-finite during time stepping."""

    def __init__(self, message: str, step: int, time: float):
        super().__init__(f"{message} (step {step}, t={time:.6g})")
        self.step = step
        self.time = time
