"""Closed-form dilemma-zone boundaries and zone classification."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

MPH = 0.44704  # m/s
SPEED_CLAMP = (15 * MPH, 25 * MPH)


@dataclass(frozen=True)
class DzParams:
    reaction_time: float = 1.0
    a_acc: float = 4.0
    a_dec: float = 3.05
    road_width: float = 4.0
    vehicle_length: float = 4.5

    def __post_init__(self):
        for name in ("reaction_time", "a_acc", "a_dec", "road_width", "vehicle_length"):
            if not getattr(self, name) > 0:
                raise ValueError(f"DzParams.{name} must be positive")


class ZoneKind(str, Enum):
    DILEMMA = "dilemma"
    OPTION = "option"


@dataclass(frozen=True)
class ZoneResult:
    s_pass: float
    s_stop: float
    kind: ZoneKind

    @property
    def interval(self) -> tuple[float, float]:
        return (min(self.s_pass, self.s_stop), max(self.s_pass, self.s_stop))


def s_pass(params: DzParams) -> float:
    """Farthest distance from which the vehicle still clears the conflict safely."""
    return params.road_width + params.vehicle_length + 0.5 * params.a_acc * params.reaction_time**2


def s_stop(v0: float, params: DzParams) -> float:
    """Shortest distance in which the vehicle can react and brake to a stop."""
    if v0 < 0:
        raise ValueError("v0 must be non-negative")
    return v0 * params.reaction_time + v0 * v0 / (2.0 * params.a_dec)


def classify_zone(v0: float, params: DzParams) -> ZoneResult:
    sp, ss = s_pass(params), s_stop(v0, params)
    kind = ZoneKind.DILEMMA if ss > sp else ZoneKind.OPTION
    return ZoneResult(sp, ss, kind)


def in_dilemma_zone(distance: float, v0: float, params: DzParams) -> bool:
    zone = classify_zone(v0, params)
    return zone.kind is ZoneKind.DILEMMA and zone.s_pass < distance < zone.s_stop


def clamp_approach_speed(speed_limit: float) -> float:
    """Approach speed used for map-wide zones: the limit clamped to 15-25 mph."""
    lo, hi = SPEED_CLAMP
    return min(max(speed_limit, lo), hi)
