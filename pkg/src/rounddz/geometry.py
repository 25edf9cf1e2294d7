"""Planar kinematic types and roundabout-frame projections.

Everything lives in a local metric frame (x, y in meters).  Values are frozen
dataclasses so scenes can be shared freely between workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import NotCirculatingError, NotOnLegError, SchemaError

TWO_PI = 2.0 * math.pi
DT_TOLERANCE = 1e-9
DEFAULT_LANE_WIDTH = 4.0
ANGLE_TOLERANCE = 1e-9  # rad


@dataclass(frozen=True)
class Vec2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite Vec2 ({self.x}, {self.y})")

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, k: float) -> "Vec2":
        return Vec2(self.x * k, self.y * k)

    __rmul__ = __mul__

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def angle(self) -> float:
        return math.atan2(self.y, self.x)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @classmethod
    def from_seq(cls, xy: Sequence[float]) -> "Vec2":
        return cls(float(xy[0]), float(xy[1]))

    @classmethod
    def polar(cls, radius: float, angle: float, center: "Vec2 | None" = None) -> "Vec2":
        c = center or ORIGIN
        return cls(c.x + radius * math.cos(angle), c.y + radius * math.sin(angle))


ORIGIN = Vec2(0.0, 0.0)


def wrap_angle(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    if -math.pi <= theta < math.pi:
        return theta  # in range already; the modulo below could move it by an ulp
    wrapped = (theta + math.pi) % TWO_PI - math.pi
    if wrapped >= math.pi:  # guards the float edge where % returns TWO_PI
        wrapped -= TWO_PI
    return wrapped


@dataclass(frozen=True)
class AgentState:
    position: Vec2
    velocity: Vec2 = ORIGIN
    acceleration: Vec2 = ORIGIN
    heading: float = 0.0
    length: float = 4.5
    width: float = 1.8

    def __post_init__(self):
        if not self.length > 0 or not self.width > 0:
            raise ValueError("vehicle length and width must be positive")
        if not math.isfinite(self.heading):
            raise ValueError("heading must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def speed(self) -> float:
        return self.velocity.norm()

    @property
    def longitudinal_acceleration(self) -> float:
        """Acceleration projected on the heading direction."""
        return self.acceleration.x * math.cos(self.heading) + self.acceleration.y * math.sin(self.heading)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled states of one agent, ordered by time."""

    agent_id: int
    dt: float
    states: tuple[tuple[float, AgentState], ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple((float(t), s) for t, s in self.states))
        if not self.states:
            raise SchemaError(f"trajectory of agent {self.agent_id} is empty")
        if not self.dt > 0:
            raise SchemaError("dt must be positive")
        times = [t for t, _ in self.states]
        for a, b in zip(times, times[1:]):
            if b <= a:
                raise SchemaError(f"agent {self.agent_id}: times not strictly increasing at t={b}")
            if abs((b - a) - self.dt) > DT_TOLERANCE:
                raise SchemaError(f"agent {self.agent_id}: time gap {b - a} != dt {self.dt} at t={b}")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.states])

    @property
    def start_frame(self) -> int:
        return frame_index(self.states[0][0], self.dt)

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.states) - 1

    def state_at_frame(self, frame: int) -> AgentState | None:
        k = frame - self.start_frame
        if 0 <= k < len(self.states):
            return self.states[k][1]
        return None

    def positions(self) -> np.ndarray:
        return np.array([[s.position.x, s.position.y] for _, s in self.states])

    def segment(self, start: int, stop: int) -> "Trajectory":
        """Sub-trajectory of state indices [start, stop)."""
        return Trajectory(self.agent_id, self.dt, self.states[start:stop])


def frame_index(t: float, dt: float) -> int:
    return int(round(t / dt))


class Polyline:
    """Piecewise-linear path with arc-length parametrization."""

    def __init__(self, points: Iterable[Sequence[float]]):
        pts = np.asarray([[float(p[0]), float(p[1])] for p in points], dtype=float)
        if len(pts) < 2:
            raise ValueError("polyline needs at least two points")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], lengths > 0])
        if not keep.all():
            pts = pts[keep]
            seg = np.diff(pts, axis=0)
            lengths = np.hypot(seg[:, 0], seg[:, 1])
        self.points = pts
        self.segments = seg
        self.seg_lengths = lengths
        self.cum = np.concatenate([[0.0], np.cumsum(lengths)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def project(self, p: Vec2, prefer_s: float | None = None) -> tuple[float, float]:
        """Orthogonal projection onto the nearest segment: (arc length, perpendicular distance).

        Ties between equally near segments go to the one whose projection lies
        closest to ``prefer_s`` (or the downstream one when no preference).
        """
        rel = np.array([p.x, p.y]) - self.points[:-1]
        u = np.einsum("ij,ij->i", rel, self.segments) / self.seg_lengths**2
        u = np.clip(u, 0.0, 1.0)
        foot = self.points[:-1] + u[:, None] * self.segments
        dist = np.hypot(*(np.array([p.x, p.y]) - foot).T)
        s_all = self.cum[:-1] + u * self.seg_lengths
        best = dist.min()
        ties = np.flatnonzero(dist <= best + 1e-12)
        if len(ties) == 1:
            k = ties[0]
        elif prefer_s is None:
            k = ties[-1]
        else:
            k = ties[np.argmin(np.abs(s_all[ties] - prefer_s))]
        return float(s_all[k]), float(dist[k])

    def _locate(self, s: float) -> tuple[int, float]:
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self.cum, s, side="right") - 1)
        k = min(max(k, 0), len(self.seg_lengths) - 1)
        return k, (s - self.cum[k]) / self.seg_lengths[k]

    def point_at(self, s: float) -> Vec2:
        k, u = self._locate(s)
        x, y = self.points[k] + u * self.segments[k]
        return Vec2(float(x), float(y))

    def points_at(self, s: np.ndarray) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        k = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_lengths) - 1)
        u = (s - self.cum[k]) / self.seg_lengths[k]
        return self.points[k] + u[:, None] * self.segments[k]

    def heading_at(self, s: float) -> float:
        k, _ = self._locate(s)
        dx, dy = self.segments[k]
        return math.atan2(dy, dx)

    def concat(self, other: "Polyline") -> "Polyline":
        return Polyline(np.vstack([self.points, other.points]))


@dataclass(frozen=True)
class ApproachLeg:
    leg_id: int
    centerline: tuple[Vec2, ...]
    yield_point: Vec2
    conflict_point: Vec2

    def __post_init__(self):
        object.__setattr__(self, "centerline", tuple(self.centerline))
        if len(self.centerline) < 2:
            raise ValueError(f"leg {self.leg_id}: centerline needs at least two points")
        _, off = self.polyline.project(self.yield_point)
        if off > 1e-6:
            raise ValueError(f"leg {self.leg_id}: yield point is {off:.3g} m off the centerline")

    @cached_property
    def polyline(self) -> Polyline:
        return Polyline([(p.x, p.y) for p in self.centerline])

    @cached_property
    def yield_s(self) -> float:
        return self.polyline.project(self.yield_point)[0]

    @cached_property
    def conflict_s(self) -> float:
        return self.polyline.project(self.conflict_point)[0]


@dataclass(frozen=True)
class RoundaboutMap:
    center: Vec2
    inner_radius: float
    outer_radius: float
    lane_width: float
    legs: tuple[ApproachLeg, ...]
    counter_clockwise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "legs", tuple(self.legs))
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError("need 0 < inner_radius < outer_radius")
        if not self.lane_width > 0:
            raise ValueError("lane_width must be positive")
        if not self.legs:
            raise ValueError("a roundabout needs at least one leg")
        for leg in self.legs:
            r = (leg.conflict_point - self.center).norm()
            if not self.inner_radius <= r <= self.outer_radius:
                raise ValueError(f"leg {leg.leg_id}: conflict point outside the circulating annulus")

    @property
    def circulating_radius(self) -> float:
        return 0.5 * (self.inner_radius + self.outer_radius)

    def leg(self, leg_id: int) -> ApproachLeg:
        for leg in self.legs:
            if leg.leg_id == leg_id:
                return leg
        raise KeyError(leg_id)

    def translated(self, offset: Vec2) -> "RoundaboutMap":
        legs = tuple(
            ApproachLeg(
                leg.leg_id,
                tuple(p + offset for p in leg.centerline),
                leg.yield_point + offset,
                leg.conflict_point + offset,
            )
            for leg in self.legs
        )
        return RoundaboutMap(self.center + offset, self.inner_radius, self.outer_radius,
                             self.lane_width, legs, self.counter_clockwise)


def distance_to_yield(state: AgentState, leg: ApproachLeg,
                      lane_width: float | None = DEFAULT_LANE_WIDTH) -> float:
    """Signed arc length from the vehicle's projection to the yield point.

    Positive upstream of the yield line.  ``lane_width`` bounds the
    perpendicular offset accepted as "on the leg"; pass None to skip the check.
    """
    s, off = leg.polyline.project(state.position, prefer_s=leg.yield_s)
    if lane_width is not None and off >= lane_width:
        raise NotOnLegError(f"vehicle is {off:.2f} m from leg {leg.leg_id}")
    return leg.yield_s - s


def in_circulating_lane(state: AgentState, rmap: RoundaboutMap) -> bool:
    r = (state.position - rmap.center).norm()
    return rmap.inner_radius <= r <= rmap.outer_radius


def arc_distance_to_conflict(state: AgentState, leg: ApproachLeg, rmap: RoundaboutMap) -> float:
    """Arc length along the vehicle's current radius to the leg's conflict point, in the circulation direction."""
    if not in_circulating_lane(state, rmap):
        raise NotCirculatingError("vehicle is not inside the circulating annulus")
    rel = state.position - rmap.center
    r = rel.norm()
    dtheta = (leg.conflict_point - rmap.center).angle() - rel.angle()
    if not rmap.counter_clockwise:
        dtheta = -dtheta
    dtheta %= TWO_PI
    if dtheta > TWO_PI - ANGLE_TOLERANCE:
        dtheta = 0.0  # at the conflict point up to rounding, not a full lap away
    return r * dtheta


def approach_leg(state: AgentState, rmap: RoundaboutMap) -> ApproachLeg | None:
    """The leg a vehicle is driving on (nearest within lane width), or None.

    Vehicles inside the annulus count as circulating, never as on a leg.
    """
    if in_circulating_lane(state, rmap):
        return None
    best, best_off = None, rmap.lane_width
    for leg in rmap.legs:
        _, off = leg.polyline.project(state.position, prefer_s=leg.yield_s)
        if off < best_off:
            best, best_off = leg, off
    return best


def circle_polyline(rmap: RoundaboutMap, radius: float, start_angle: float, sweep: float,
                    step: float = 0.02) -> Polyline:
    n = max(int(math.ceil(abs(sweep) / step)), 1)
    sign = 1.0 if rmap.counter_clockwise else -1.0
    angles = start_angle + sign * np.linspace(0.0, abs(sweep), n + 1)
    return Polyline(np.column_stack([rmap.center.x + radius * np.cos(angles),
                                     rmap.center.y + radius * np.sin(angles)]))


@lru_cache(maxsize=256)
def leg_path(leg: ApproachLeg, rmap: RoundaboutMap, sweep: float = TWO_PI) -> Polyline:
    """Leg centerline up to the conflict point, then the circulating arc from there."""
    pts = leg.polyline.points
    keep = pts[leg.polyline.cum <= leg.conflict_s + 1e-9]
    rel = leg.conflict_point - rmap.center
    arc = circle_polyline(rmap, rel.norm(), rel.angle(), sweep)
    return Polyline(np.vstack([keep, arc.points]))


def path_for(state: AgentState, rmap: RoundaboutMap, sweep: float = TWO_PI) -> tuple[Polyline, float, ApproachLeg | None]:
    """Forward path a vehicle follows from its current position: (path, start arc length, leg)."""
    if in_circulating_lane(state, rmap):
        rel = state.position - rmap.center
        return circle_polyline(rmap, rel.norm(), rel.angle(), sweep), 0.0, None
    leg = approach_leg(state, rmap)
    if leg is not None:
        path = leg_path(leg, rmap, sweep)
        s0, _ = path.project(state.position, prefer_s=leg.yield_s)
        return path, s0, leg
    h = state.heading
    p = state.position
    far = Vec2(p.x + 1000.0 * math.cos(h), p.y + 1000.0 * math.sin(h))
    return Polyline([(p.x, p.y), (far.x, far.y)]), 0.0, None


def build_roundabout(
    n_legs: int = 3,
    inner_radius: float = 10.0,
    outer_radius: float = 16.0,
    lane_width: float = 4.0,
    entry_radius: float = 17.5,
    entry_sweep: float = 1.0,
    merge_angle: float = 0.25,
    approach_length: float = 100.0,
    rotation: float = 0.0,
    center: Vec2 = ORIGIN,
) -> RoundaboutMap:
    """Single-lane counter-clockwise roundabout with curved entries.

    Each entry runs radially inward, then follows an arc just outside the
    annulus (``entry_radius``) for ``entry_sweep`` radians before the yield
    point, then merges onto the circulating lane ``merge_angle`` further on.
    """
    r_c = 0.5 * (inner_radius + outer_radius)
    legs = []
    for k in range(n_legs):
        theta_y = rotation + TWO_PI * k / n_legs
        theta_0 = theta_y - entry_sweep
        pts = [Vec2.polar(entry_radius + approach_length, theta_0, center)]
        n_arc = max(int(math.ceil(entry_sweep / 0.05)), 1)
        for a in np.linspace(theta_0, theta_y, n_arc + 1):
            pts.append(Vec2.polar(entry_radius, float(a), center))
        yield_point = pts[-1]
        conflict = Vec2.polar(r_c, theta_y + merge_angle, center)
        pts.append(conflict)
        legs.append(ApproachLeg(k, tuple(pts), yield_point, conflict))
    return RoundaboutMap(center, inner_radius, outer_radius, lane_width, tuple(legs))
