"""Learning-rate schedules shared by the round loop and the radius calculators."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ParameterError


@dataclass(frozen=True)
class Schedule:
    """constant: lambda(t) = value. triangular: linear ramp 0 -> peak over
    warmup_frac * T rounds, then linear decay back to 0 at t = T (discretized,
    so lambda(1) is one ramp step above 0 and lambda(T) = 0 exactly)."""

    kind: str = "constant"
    value: float = 0.1
    peak: float = 0.2
    warmup_frac: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "triangular"):
            raise ParameterError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and not self.value > 0:
            raise ParameterError("constant schedule needs value > 0")
        if self.kind == "triangular":
            if not self.peak > 0:
                raise ParameterError("triangular schedule needs peak > 0")
            if not 0.0 < self.warmup_frac <= 1.0:
                raise ParameterError("warmup_frac must be in (0, 1]")


def lambda_at(schedule: Schedule, t: int, T: int) -> float:
    """Learning rate at round t of T (1-indexed)."""
    if not 1 <= t <= T:
        raise ParameterError(f"round {t} outside [1, {T}]")
    if schedule.kind == "constant":
        return schedule.value
    if T == 1:
        return schedule.peak
    t_peak = min(max(schedule.warmup_frac * T, 1.0), float(T))
    if t <= t_peak:
        return schedule.peak * t / t_peak
    return schedule.peak * (T - t) / (T - t_peak)


def cumulative(schedule: Schedule, T: int) -> float:
    return sum(lambda_at(schedule, t, T) for t in range(1, T + 1))
