"""Regularization-strength schedules indexed by optimizer step.

The exponential ramp interpolates geometrically between its endpoints over a
fixed horizon and then holds the end value; starting small lets the task loss
shape the weights freely before the periodic penalty takes over.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ParameterError


class ScheduleKind(str, enum.Enum):
    CONSTANT = "constant"
    EXPONENTIAL = "exponential"


@dataclass(frozen=True)
class LambdaSchedule:
    kind: ScheduleKind
    start_value: float
    end_value: float = 0.0
    horizon: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        object.__setattr__(self, "start_value", float(self.start_value))
        object.__setattr__(self, "end_value", float(self.end_value))
        if not math.isfinite(self.start_value) or self.start_value < 0.0:
            raise ParameterError("start_value must be finite and non-negative")
        if self.kind is ScheduleKind.EXPONENTIAL:
            if self.start_value <= 0.0 or self.end_value <= 0.0:
                raise ParameterError(
                    "exponential schedule needs positive endpoints (geometric interpolation)"
                )
            if not isinstance(self.horizon, int) or self.horizon < 1:
                raise ParameterError("horizon must be a positive integer")

    @classmethod
    def constant(cls, value: float) -> "LambdaSchedule":
        return cls(ScheduleKind.CONSTANT, value)

    @classmethod
    def exponential(cls, start: float, end: float, horizon: int) -> "LambdaSchedule":
        return cls(ScheduleKind.EXPONENTIAL, start, end, horizon)


def lambda_at(s: LambdaSchedule, t: int) -> float:
    """Schedule value at step `t`: start·(end/start)^(t/horizon), held past the horizon."""
    if t < 0:
        raise ParameterError(f"step index must be non-negative, got {t}")
    if s.kind is ScheduleKind.CONSTANT:
        return s.start_value
    if t >= s.horizon:
        return s.end_value
    return s.start_value * (s.end_value / s.start_value) ** (t / s.horizon)
