"""Surrogate safety measures and the virtual yellow-light state machine.

A circulating vehicle heading for an approach's conflict point acts like a
signal for the vehicle on that approach: Green when nothing threatens it,
Yellow when a threat is near but the approacher could still stop in time,
Red when it could not.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .dilemma import DzParams, in_dilemma_zone
from .errors import SchemaError
from .geometry import (
    AgentState,
    ApproachLeg,
    RoundaboutMap,
    Trajectory,
    approach_leg,
    arc_distance_to_conflict,
    distance_to_yield,
    frame_index,
    in_circulating_lane,
)

MIN_THREAT_SPEED = 0.1  # m/s; slower circulating vehicles never reach the conflict


@dataclass(frozen=True)
class SignalParams:
    t_max: float = 1.5
    d_t: float = 10.0
    dz: DzParams = field(default_factory=DzParams)
    include_red: bool = True  # whether Red frames count toward labeled DZ events

    def __post_init__(self):
        if not self.t_max > 0 or not self.d_t > 0:
            raise ValueError("t_max and d_t must be positive")


class SignalState(str, Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


@dataclass(frozen=True)
class ConflictAssessment:
    ttc: float
    tts: float
    soc: float
    circulating_id: int


def time_to_collision(approaching: AgentState, circulating: AgentState, leg: ApproachLeg,
                      rmap: RoundaboutMap) -> float:
    """Constant-speed time for the circulating vehicle to reach the leg's conflict point."""
    arc = arc_distance_to_conflict(circulating, leg, rmap)
    speed = circulating.speed
    if speed < MIN_THREAT_SPEED:
        return math.inf
    return arc / speed


def time_to_stop(approaching: AgentState, params: SignalParams) -> float:
    return params.dz.reaction_time + approaching.speed / params.dz.a_dec


def separation(a: AgentState, b: AgentState) -> float:
    return (a.position - b.position).norm()


def compute_signal(approaching: AgentState, leg: ApproachLeg, scene: Mapping[int, AgentState],
                   rmap: RoundaboutMap, params: SignalParams) -> tuple[SignalState, ConflictAssessment | None]:
    """Virtual signal shown to ``approaching`` by the circulating vehicles in ``scene``.

    Threats are visited in ascending TTC (ties by id).  The first gated threat
    that arrives no later than the approacher could stop makes the signal Red
    immediately; otherwise any gated threat makes it Yellow.
    """
    tts = time_to_stop(approaching, params)
    threats = []
    for agent_id, other in scene.items():
        if other is approaching or not in_circulating_lane(other, rmap):
            continue
        threats.append((time_to_collision(approaching, other, leg, rmap), agent_id, other))
    threats.sort(key=lambda item: (item[0], item[1]))

    signal, yellow = SignalState.GREEN, None
    for ttc, agent_id, other in threats:
        soc = separation(approaching, other)
        if not (ttc < params.t_max and soc < params.d_t):
            continue
        if ttc <= tts:
            return SignalState.RED, ConflictAssessment(ttc, tts, soc, agent_id)
        signal = SignalState.YELLOW
        if yellow is None:
            yellow = ConflictAssessment(ttc, tts, soc, agent_id)
    return signal, yellow


@dataclass(frozen=True)
class FrameInfo:
    """Per-frame annotation of one agent relative to the roundabout."""

    leg: ApproachLeg | None
    dist_to_yield: float | None  # None when not on an approach leg
    signal: SignalState
    assessment: ConflictAssessment | None
    in_dz: bool


@dataclass(frozen=True)
class DzEvent:
    agent_id: int
    t_start: float
    t_end: float
    cause_id: int
    frame_start: int
    frame_end: int


def scenes_by_frame(trajectories: Iterable[Trajectory]) -> tuple[float | None, dict[int, dict[int, AgentState]]]:
    """Group states by global frame index; checks that all trajectories share dt."""
    dt = None
    frames: dict[int, dict[int, AgentState]] = {}
    for traj in trajectories:
        if dt is None:
            dt = traj.dt
        elif abs(traj.dt - dt) > 1e-9:
            raise SchemaError(f"agent {traj.agent_id} has dt {traj.dt}, expected {dt}")
        for t, state in traj.states:
            frames.setdefault(frame_index(t, traj.dt), {})[traj.agent_id] = state
    return dt, frames


def annotate(state: AgentState, scene: Mapping[int, AgentState], rmap: RoundaboutMap,
             params: SignalParams) -> FrameInfo:
    leg = approach_leg(state, rmap)
    if leg is None:
        return FrameInfo(None, None, SignalState.GREEN, None, False)
    d = distance_to_yield(state, leg, None)
    if d <= 0:
        return FrameInfo(leg, d, SignalState.GREEN, None, False)
    signal, assessment = compute_signal(state, leg, scene, rmap, params)
    return FrameInfo(leg, d, signal, assessment, in_dilemma_zone(d, state.speed, params.dz))


def is_event_frame(info: FrameInfo, params: SignalParams) -> bool:
    flagged = (SignalState.YELLOW, SignalState.RED) if params.include_red else (SignalState.YELLOW,)
    return info.in_dz and info.signal in flagged


def _agent_events(traj: Trajectory, frames: Mapping[int, Mapping[int, AgentState]], rmap: RoundaboutMap,
                  params: SignalParams) -> list[DzEvent]:
    events = []
    run: list[tuple[int, FrameInfo]] = []
    for t, state in traj.states:
        f = frame_index(t, traj.dt)
        info = annotate(state, frames[f], rmap, params)
        if is_event_frame(info, params):
            run.append((f, info))
            continue
        if run:
            events.append(_close_run(traj, run))
            run = []
    if run:
        events.append(_close_run(traj, run))
    return events


def _close_run(traj: Trajectory, run: list[tuple[int, FrameInfo]]) -> DzEvent:
    f0, info0 = run[0]
    f1 = run[-1][0]
    return DzEvent(traj.agent_id, f0 * traj.dt, f1 * traj.dt, info0.assessment.circulating_id, f0, f1)


def label_dz_events(trajectories: Iterable[Trajectory], rmap: RoundaboutMap, params: SignalParams,
                    workers: int = 1) -> list[DzEvent]:
    """Ground-truth DZ events: maximal runs of frames flagged by the signal while inside the zone."""
    trajectories = list(trajectories)
    _, frames = scenes_by_frame(trajectories)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            chunks = list(pool.map(lambda tr: _agent_events(tr, frames, rmap, params), trajectories))
    else:
        chunks = [_agent_events(tr, frames, rmap, params) for tr in trajectories]
    events = [e for chunk in chunks for e in chunk]
    events.sort(key=lambda e: (e.agent_id, e.frame_start))
    return events
