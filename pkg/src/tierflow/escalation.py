"""Escalation level bookkeeping and intervention-budget schedules.

Everything here is pure: levels are plain ints and schedules are frozen
dataclasses, so the functions are safe to share across worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

DEFAULT_BASE = 2
DEFAULT_GROWTH = 2
DEFAULT_CAP = 8
DEFAULT_RATE = 1.0
DEFAULT_MIDPOINT = 2.0


class ScheduleError(ValueError):
    """Schedule parameters violate their invariants; ``key`` names the parameter."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class Static:
    base: int = DEFAULT_BASE

    def __post_init__(self):
        if self.base < 1:
            raise ScheduleError("b0", f"must be a positive integer, got {self.base}")


@dataclass(frozen=True)
class LinearBounded:
    base: int = DEFAULT_BASE
    growth: int = DEFAULT_GROWTH
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.base < 1:
            raise ScheduleError("b0", f"must be a positive integer, got {self.base}")
        if self.growth < 0:
            raise ScheduleError("k", f"must be non-negative, got {self.growth}")
        if self.cap < 1:
            raise ScheduleError("bmax", f"must be a positive integer, got {self.cap}")
        if self.base > self.cap:
            raise ScheduleError("bmax", f"({self.cap}) must be >= b0 ({self.base})")


@dataclass(frozen=True)
class Sigmoid:
    base: int = DEFAULT_BASE
    cap: int = DEFAULT_CAP
    rate: float = DEFAULT_RATE
    midpoint: float = DEFAULT_MIDPOINT

    def __post_init__(self):
        if self.base < 1:
            raise ScheduleError("b0", f"must be a positive integer, got {self.base}")
        if self.cap <= self.base:
            raise ScheduleError("bmax", f"({self.cap}) must be > b0 ({self.base}) for a sigmoid schedule")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ScheduleError("alpha", f"must be a positive finite number, got {self.rate}")
        if not (self.midpoint >= 0 and math.isfinite(self.midpoint)):
            raise ScheduleError("beta", f"must be a non-negative finite number, got {self.midpoint}")


BudgetSchedule = Union[Static, LinearBounded, Sigmoid]


def update_level(previous: int, progress: bool) -> int:
    """Advance the escalation level by one progress signal.

    A FALSE signal extends the run of consecutive failures; TRUE resets it.
    """
    return 0 if progress else previous + 1


def fold_levels(signals) -> int:
    level = 0
    for value in signals:
        level = update_level(level, value)
    return level


def sigmoid(x: float) -> float:
    # Branch on sign so exp() never overflows.
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def sigmoid_budget_raw(schedule: Sigmoid, level: int) -> float:
    """Real-valued sigmoid budget before rounding to a step count."""
    span = schedule.cap - schedule.base
    return schedule.base + span * sigmoid(schedule.rate * (level - schedule.midpoint))


def intervention_budget(schedule: BudgetSchedule, level: int) -> int:
    """Number of consecutive large-tier steps granted at escalation level ``level``."""
    if isinstance(schedule, Static):
        return schedule.base
    if isinstance(schedule, LinearBounded):
        return min(schedule.cap, schedule.base + schedule.growth * level)
    if isinstance(schedule, Sigmoid):
        # Round up, then clamp: sigmoid saturates to exactly 1.0 in floating point
        # for large arguments, and the ceiling must never pass the cap.
        return max(1, min(schedule.cap, math.ceil(sigmoid_budget_raw(schedule, level))))
    raise TypeError(f"unknown schedule type: {type(schedule).__name__}")


def schedule_to_dict(schedule: BudgetSchedule) -> dict:
    if isinstance(schedule, Static):
        return {"kind": "static", "b0": schedule.base}
    if isinstance(schedule, LinearBounded):
        return {"kind": "linear", "b0": schedule.base, "k": schedule.growth, "bmax": schedule.cap}
    if isinstance(schedule, Sigmoid):
        return {
            "kind": "sigmoid",
            "b0": schedule.base,
            "bmax": schedule.cap,
            "alpha": schedule.rate,
            "beta": schedule.midpoint,
        }
    raise TypeError(f"unknown schedule type: {type(schedule).__name__}")


def schedule_from_dict(data: dict) -> BudgetSchedule:
    """Build a schedule from its config mapping (``kind`` plus parameters)."""
    kind = data.get("kind", "linear")
    b0 = int(data.get("b0", DEFAULT_BASE))
    if kind == "static":
        return Static(b0)
    if kind == "linear":
        return LinearBounded(b0, int(data.get("k", DEFAULT_GROWTH)), int(data.get("bmax", DEFAULT_CAP)))
    if kind == "sigmoid":
        return Sigmoid(
            b0,
            int(data.get("bmax", DEFAULT_CAP)),
            float(data.get("alpha", DEFAULT_RATE)),
            float(data.get("beta", DEFAULT_MIDPOINT)),
        )
    raise ScheduleError("schedule", f"kind must be one of static/linear/sigmoid, got {kind!r}")
