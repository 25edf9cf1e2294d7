"""Deterministic single-lane roundabout micro-simulator.

Vehicles arrive on each approach as Poisson streams, track their desired speed
with a bounded-acceleration time-gap rule, and react to the virtual signal of
the circulating traffic.  A driver caught inside the dilemma zone by a Yellow
or Red signal either brakes hard (the abnormal event the detector looks for)
or carries on.  Circulating vehicles keep a constant cruise speed unless the
gap to the vehicle ahead forces them to slow.

Signals and dilemma-zone decisions are evaluated only on recorded frames, on
the exact states written to the trajectories, so the ground-truth labels
recomputed from the output agree with what the drivers reacted to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    AgentState,
    ApproachLeg,
    Polyline,
    RoundaboutMap,
    TWO_PI,
    Trajectory,
    Vec2,
    circle_polyline,
    leg_path,
)
from .signal import DzEvent, SignalParams, SignalState, annotate, label_dz_events

SPEED_RANGE = (6.7, 11.2)  # 15-25 mph
MAX_ACCEL = 2.0
EMERGENCY_DECEL = 9.0
STANDSTILL_GAP = 2.0
TIME_GAP = 2.0
STOP_MARGIN = 1.0  # stop with the vehicle center this far before the yield point
GUARD_ONSET = 3.05  # m/s^2; the last-resort yield reacts no earlier than this braking need
COMMIT_SPEED = 3.0  # m/s; vehicles that never slowed below this are committed once past the yield line
CIRC_SPAWN_OFFSET = 0.35  # rad past a conflict point where upstream circulating traffic appears
CONFLICT_CLEARANCE = 6.0  # meters a threat must travel past the conflict point before it is clear


@dataclass(frozen=True)
class DriverProfile:
    desired_speed: float = 10.0
    reaction_time: float = 1.0
    hard_brake_decel: float = 7.0
    dz_brake_probability: float = 0.5

    def __post_init__(self):
        lo, hi = SPEED_RANGE
        if not lo - 1e-9 <= self.desired_speed <= hi + 1e-9:
            raise ValueError(f"desired_speed {self.desired_speed} outside the 15-25 mph band")
        if not 0.0 <= self.dz_brake_probability <= 1.0:
            raise ValueError("dz_brake_probability must be in [0, 1]")
        if self.reaction_time < 0 or not self.hard_brake_decel > 0:
            raise ValueError("reaction_time >= 0 and hard_brake_decel > 0 required")


@dataclass(frozen=True)
class ProfileDistribution:
    """Uniform ranges the per-vehicle driver profiles are drawn from."""

    desired_speed: tuple[float, float] = SPEED_RANGE
    reaction_time: tuple[float, float] = (0.8, 1.2)
    hard_brake_decel: tuple[float, float] = (6.0, 8.0)
    dz_brake_probability: float = 0.5

    def sample(self, rng: np.random.Generator) -> DriverProfile:
        return DriverProfile(
            desired_speed=float(rng.uniform(*self.desired_speed)),
            reaction_time=float(rng.uniform(*self.reaction_time)),
            hard_brake_decel=float(rng.uniform(*self.hard_brake_decel)),
            dz_brake_probability=self.dz_brake_probability,
        )


@dataclass(frozen=True)
class ScriptedVehicle:
    """A vehicle inserted at a fixed time, used to stage specific conflicts.

    ``leg`` None places the vehicle on the circulating lane at ``angle``;
    otherwise it starts ``distance`` meters upstream of that leg's yield point.
    """

    time: float
    speed: float
    leg: int | None = None
    distance: float = 60.0
    angle: float = 0.0
    profile: DriverProfile | None = None


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5
    duration: float = 600.0
    arrival_rate: float = 0.08  # vehicles/s per approach leg
    circulating_rate: float = 0.1  # vehicles/s entering from unmodeled upstream legs
    circulating_speed: float = 7.0
    profiles: ProfileDistribution = field(default_factory=ProfileDistribution)
    signal: SignalParams = field(default_factory=SignalParams)
    seed: int = 0
    substeps: int = 5
    scripted: tuple[ScriptedVehicle, ...] = ()

    def __post_init__(self):
        if not self.dt > 0 or self.substeps < 1:
            raise ValueError("dt > 0 and substeps >= 1 required")
        if self.arrival_rate < 0 or self.circulating_rate < 0:
            raise ValueError("arrival rates must be non-negative")


@dataclass(frozen=True)
class Collision:
    time: float
    agents: tuple[int, int]


@dataclass(frozen=True)
class SimResult:
    trajectories: tuple[Trajectory, ...]
    ground_truth_events: tuple[DzEvent, ...]
    collisions: tuple[Collision, ...]
    dt: float

    def trajectory(self, agent_id: int) -> Trajectory:
        for tr in self.trajectories:
            if tr.agent_id == agent_id:
                return tr
        raise KeyError(agent_id)


def collision_check(a: AgentState, b: AgentState) -> bool:
    """Bounding-circle overlap with a 0.3 m clearance."""
    return (a.position - b.position).norm() < 0.25 * (a.length + b.length) + 0.3


@dataclass
class _Vehicle:
    agent_id: int
    path: Polyline
    s: float
    v: float
    profile: DriverProfile
    exit_s: float
    leg: ApproachLeg | None = None
    yield_s: float = -math.inf
    conflict_s: float = -math.inf
    length: float = 4.5
    width: float = 1.8
    a: float = 0.0
    mode: str = "cruise"
    go_after: float = 0.0  # start-up is delayed until this time after a stop
    dz_decided: bool = False
    slowest: float = math.inf  # lowest speed reached so far
    states: list = field(default_factory=list)

    @property
    def approaching(self) -> bool:
        return self.leg is not None and self.s < self.yield_s

    @property
    def circulating(self) -> bool:
        return self.s >= self.conflict_s

    def state(self) -> AgentState:
        p = self.path.point_at(self.s)
        h = self.path.heading_at(self.s)
        c, sn = math.cos(h), math.sin(h)
        return AgentState(p, Vec2(self.v * c, self.v * sn), Vec2(self.a * c, self.a * sn), h,
                          self.length, self.width)


class _World:
    def __init__(self, rmap: RoundaboutMap, config: SimConfig):
        self.rmap = rmap
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.vehicles: list[_Vehicle] = []
        self.finished: list[_Vehicle] = []
        self.collisions: list[Collision] = []
        self._touching: set[tuple[int, int]] = set()
        self._next_id = 0
        self.n_legs = len(rmap.legs)
        self._pending = self._draw_arrivals()

    # -- arrivals ---------------------------------------------------------
    def _draw_arrivals(self) -> list[tuple[float, int, object]]:
        cfg = self.config
        arrivals: list[tuple[float, int, object]] = []
        streams = [(cfg.arrival_rate, k) for k in range(self.n_legs)] + [(cfg.circulating_rate, -1)]
        order = 0
        for rate, leg_index in streams:
            if rate <= 0:
                continue
            t = float(self.rng.exponential(1.0 / rate))
            while t < cfg.duration:
                arrivals.append((t, order, ("leg", leg_index) if leg_index >= 0 else ("circ", None)))
                order += 1
                t += float(self.rng.exponential(1.0 / rate))
        for sv in cfg.scripted:
            arrivals.append((sv.time, order, ("scripted", sv)))
            order += 1
        arrivals.sort(key=lambda a: (a[0], a[1]))
        return arrivals

    def _exit_sweep(self) -> float:
        j = int(self.rng.integers(1, self.n_legs + 1))
        return TWO_PI * j / (self.n_legs + 1) if self.n_legs > 1 else math.pi

    def _spawn_on_leg(self, leg: ApproachLeg, speed: float | None, distance: float | None,
                      profile: DriverProfile | None) -> _Vehicle | None:
        profile = profile or self.config.profiles.sample(self.rng)
        sweep = self._exit_sweep()
        path = leg_path(leg, self.rmap)
        yield_s = path.project(leg.yield_point, prefer_s=leg.yield_s)[0]
        conflict_s = path.project(leg.conflict_point, prefer_s=leg.conflict_s)[0]
        s0 = 0.0 if distance is None else max(yield_s - distance, 0.0)
        for other in self.vehicles:
            if other.leg is leg and other.s < conflict_s and abs(other.s - s0) < 15.0:
                return None
        v = profile.desired_speed if speed is None else speed
        exit_s = conflict_s + sweep * (leg.conflict_point - self.rmap.center).norm()
        return _Vehicle(self._new_id(), path, s0, v, profile, exit_s, leg, yield_s, conflict_s)

    def _spawn_circulating(self, angle: float, speed: float | None,
                           profile: DriverProfile | None) -> _Vehicle | None:
        r = self.rmap.circulating_radius
        p = Vec2.polar(r, angle, self.rmap.center)
        for other in self.vehicles:
            if (other.path.point_at(other.s) - p).norm() < 10.0:
                return None
        sweep = self._exit_sweep()
        path = circle_polyline(self.rmap, r, angle, sweep + 0.5)
        profile = profile or self.config.profiles.sample(self.rng)
        v = self.config.circulating_speed if speed is None else speed
        return _Vehicle(self._new_id(), path, 0.0, v, profile, sweep * r)

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def spawn_due(self, t: float) -> None:
        waiting = []
        for item in self._pending:
            when, order, (kind, payload) = item
            if when > t + 1e-9:
                waiting.append(item)
                continue
            if kind == "leg":
                veh = self._spawn_on_leg(self.rmap.legs[payload], None, None, None)
            elif kind == "circ":
                k = int(self.rng.integers(self.n_legs))
                leg = self.rmap.legs[k]
                base = (leg.conflict_point - self.rmap.center).angle()
                veh = self._spawn_circulating(base + CIRC_SPAWN_OFFSET, None, None)
            else:
                sv: ScriptedVehicle = payload
                if sv.leg is None:
                    veh = self._spawn_circulating(sv.angle, sv.speed, sv.profile)
                else:
                    veh = self._spawn_on_leg(self.rmap.legs[sv.leg], sv.speed, sv.distance, sv.profile)
            if veh is None:  # entry blocked: retry next substep
                waiting.append(item)
            else:
                self.vehicles.append(veh)
        self._pending = waiting

    # -- per-frame driver decisions ---------------------------------------
    def decide(self, t: float, scene: dict[int, AgentState]) -> None:
        params = self.config.signal
        for veh in self.vehicles:
            if not veh.approaching:
                continue
            info = annotate(scene[veh.agent_id], scene, self.rmap, params)
            d = veh.yield_s - veh.s
            flagged = info.signal in (SignalState.YELLOW, SignalState.RED)
            if veh.mode == "dz_brake":
                if veh.v <= 1e-6:
                    veh.mode = "stopping"
                continue
            if veh.mode == "dz_go":
                continue
            if info.in_dz and flagged:
                if not veh.dz_decided:
                    veh.dz_decided = True
                    brake = self.rng.random() < veh.profile.dz_brake_probability
                    veh.mode = "dz_brake" if brake else "dz_go"
                    continue
            if info.signal is SignalState.RED:
                if d - STOP_MARGIN >= veh.v**2 / (2 * params.dz.a_dec):
                    veh.mode = "stopping"
                elif veh.mode != "stopping":
                    veh.mode = "cruise"
            elif info.signal is SignalState.YELLOW:
                if veh.mode != "stopping":
                    veh.mode = "yielding"
            elif veh.mode in ("stopping", "yielding"):
                if veh.v < 0.5:
                    veh.go_after = t + veh.profile.reaction_time
                veh.mode = "cruise"

    # -- longitudinal control ---------------------------------------------
    def _leader_gap(self, veh: _Vehicle, positions: dict[int, Vec2]) -> tuple[float, float]:
        best_gap, lead_v = math.inf, veh.v
        if veh.circulating or veh.leg is None:
            rel = positions[veh.agent_id] - self.rmap.center
            ang = rel.angle()
            r = rel.norm()
            for other in self.vehicles:
                if other is veh:
                    continue
                if other.leg is not None and not other.circulating:
                    continue
                orel = positions[other.agent_id] - self.rmap.center
                if abs(orel.norm() - r) > 2.0:
                    continue
                dth = (orel.angle() - ang) % TWO_PI
                if not self.rmap.counter_clockwise:
                    dth = (-dth) % TWO_PI
                gap = r * dth - 0.5 * (veh.length + other.length)
                if 0 < r * dth < 40.0 and gap < best_gap:
                    best_gap, lead_v = gap, other.v
        else:
            for other in self.vehicles:
                if other is veh or other.leg is not veh.leg or other.circulating:
                    continue
                ds = other.s - veh.s
                if ds > 0:
                    gap = ds - 0.5 * (veh.length + other.length)
                    if gap < best_gap:
                        best_gap, lead_v = gap, other.v
            to_conflict = veh.conflict_s - veh.s
            if to_conflict < 20.0:
                # circulating vehicles just past the conflict point are leaders too
                cp = veh.leg.conflict_point - self.rmap.center
                for other in self.vehicles:
                    if other is veh or not (other.circulating or other.leg is None):
                        continue
                    orel = positions[other.agent_id] - self.rmap.center
                    dth = (orel.angle() - cp.angle()) % TWO_PI
                    if not self.rmap.counter_clockwise:
                        dth = (-dth) % TWO_PI
                    arc = cp.norm() * dth
                    if arc < 20.0:
                        gap = to_conflict + arc - 0.5 * (veh.length + other.length)
                        if gap < best_gap:
                            best_gap, lead_v = gap, other.v
        return best_gap, lead_v

    def _conflict_guard(self, veh: _Vehicle, positions: dict[int, Vec2]) -> float | None:
        """Deceleration needed to hold short of an occupied conflict point, if any."""
        if veh.leg is None or veh.circulating or veh.mode == "dz_go":
            return None  # a driver who chose to go in the dilemma zone is committed
        to_conflict = veh.conflict_s - veh.s
        # earliest arrival assuming full acceleration from now on
        t_arrive = (-veh.v + math.sqrt(veh.v**2 + 2 * MAX_ACCEL * to_conflict)) / MAX_ACCEL
        if t_arrive > 5.0:
            return None
        cp = veh.leg.conflict_point
        danger = False
        for other in self.vehicles:
            if other is veh or not (other.circulating or other.leg is None):
                continue
            p = positions[other.agent_id]
            if (p - cp).norm() < CONFLICT_CLEARANCE:
                danger = True
                break
            rel = p - self.rmap.center
            dth = ((cp - self.rmap.center).angle() - rel.angle()) % TWO_PI
            if not self.rmap.counter_clockwise:
                dth = (-dth) % TWO_PI
            arc = rel.norm() * dth
            if other.v < 0.1:
                continue
            ttc = arc / other.v
            t_clear = (arc + CONFLICT_CLEARANCE) / other.v
            if ttc - 1.0 < t_arrive < t_clear + 0.5 or (t_arrive >= t_clear + 0.5 and ttc < 1.0):
                danger = True
                break
        if not danger:
            return None
        past_line = veh.s >= veh.yield_s - STOP_MARGIN
        if past_line and veh.slowest > COMMIT_SPEED:
            return None  # entered without yielding: drivers complete the merge rather than stop in it
        hold = veh.conflict_s - 4.0 if past_line else veh.yield_s - STOP_MARGIN
        room = hold - veh.s
        if room <= 0.05:
            return -EMERGENCY_DECEL if veh.s < veh.conflict_s - 4.0 else None
        need = veh.v**2 / (2 * room)
        if need > EMERGENCY_DECEL:
            return None  # committed: cannot hold short any more
        if need < GUARD_ONSET and veh.v > 1.0:
            return None  # drivers only react once comfortable braking no longer suffices
        return -need

    def control(self, veh: _Vehicle, t: float, positions: dict[int, Vec2]) -> float:
        cfg = self.config
        target = veh.profile.desired_speed if veh.approaching else cfg.circulating_speed
        if veh.leg is None:
            target = cfg.circulating_speed
        a_free = min(max(1.0 * (target - veh.v), -3.0), MAX_ACCEL)
        gap, lead_v = self._leader_gap(veh, positions)
        a = a_free
        if gap < math.inf:
            a_follow = 0.5 * (gap - (STANDSTILL_GAP + veh.v * TIME_GAP)) + 1.0 * (lead_v - veh.v)
            a = min(a, max(a_follow, -EMERGENCY_DECEL))
        if veh.approaching:
            d = veh.yield_s - veh.s
            if veh.mode == "dz_brake":
                a = min(a, -veh.profile.hard_brake_decel)
            elif veh.mode == "stopping":
                room = d - STOP_MARGIN
                a = min(a, -veh.v**2 / (2 * room) if room > 0.05 else -EMERGENCY_DECEL)
            elif veh.mode == "yielding":
                room = d - STOP_MARGIN
                if room < 3.0:
                    a = min(a, -veh.v**2 / (2 * room) if room > 0.05 else -EMERGENCY_DECEL)
                elif veh.v > 2.0:
                    a = min(a, -0.5 * cfg.signal.dz.a_dec)
                else:
                    a = min(a, 0.0)
        if t < veh.go_after:
            a = min(a, 0.0)
        guard = self._conflict_guard(veh, positions)
        if guard is not None:
            a = min(a, guard)
        return a

    def step(self, t: float, h: float) -> None:
        positions = {veh.agent_id: veh.path.point_at(veh.s) for veh in self.vehicles}
        accels = [self.control(veh, t, positions) for veh in self.vehicles]
        for veh, a in zip(self.vehicles, accels):
            if veh.v + a * h < 0:  # stops within the substep
                t_stop = veh.v / -a if a < 0 else 0.0
                veh.s += veh.v * t_stop + 0.5 * a * t_stop**2
                veh.v = 0.0
            else:
                veh.s += veh.v * h + 0.5 * a * h * h
                veh.v += a * h
            veh.slowest = min(veh.slowest, veh.v)
            veh.a = a
        still = []
        for veh in self.vehicles:
            (self.finished if veh.s >= veh.exit_s else still).append(veh)
        self.vehicles = still

    def check_collisions(self, t: float) -> None:
        if len(self.vehicles) < 2:
            self._touching = set()
            return
        pts = np.array([[p.x, p.y] for p in (v.path.point_at(v.s) for v in self.vehicles)])
        lens = np.array([v.length for v in self.vehicles])
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        limit = 0.25 * (lens[:, None] + lens[None, :]) + 0.3
        ii, jj = np.nonzero(np.triu(dist < limit, k=1))
        touching = set()
        for i, j in zip(ii, jj):
            pair = tuple(sorted((self.vehicles[i].agent_id, self.vehicles[j].agent_id)))
            touching.add(pair)
            if pair not in self._touching:
                self.collisions.append(Collision(t, pair))
        self._touching = touching


def simulate(rmap: RoundaboutMap, config: SimConfig) -> SimResult:
    world = _World(rmap, config)
    h = config.dt / config.substeps
    n_frames = int(math.floor(config.duration / config.dt + 1e-9)) + 1
    for frame in range(n_frames):
        t = frame * config.dt
        world.spawn_due(t)
        scene = {}
        for veh in world.vehicles:
            state = veh.state()
            veh.states.append((t, state))
            scene[veh.agent_id] = state
        world.decide(t, scene)
        if frame == n_frames - 1:
            break
        for k in range(config.substeps):
            tk = t + k * h
            if k:
                world.spawn_due(tk)
            world.step(tk, h)
            world.check_collisions(tk + h)
    trajectories = []
    for veh in sorted(world.finished + world.vehicles, key=lambda v: v.agent_id):
        if veh.states:
            trajectories.append(Trajectory(veh.agent_id, config.dt, tuple(veh.states)))
    events = label_dz_events(trajectories, rmap, config.signal)
    return SimResult(tuple(trajectories), tuple(events), tuple(world.collisions), config.dt)
