"""Ego maneuver study on dilemma scenarios.

For each sampled dilemma case the ego vehicle applies one constant
acceleration for a short horizon while every other vehicle keeps following
its most-likely predicted trajectory, re-planned every frame.  The outcome is
the share of cases without an ego collision, split by the forecaster's
pass probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import SampleShortfallError
from .forecaster import GnnParams, build_scene_graph, forecast, forecast_labels
from .geometry import AgentState, Trajectory, Vec2, path_for
from .predictor import Predictor, rollout_mode, Mode
from .signal import DzEvent, scenes_by_frame
from .sim import collision_check

ACTIONS = (2.0, 4.0, -2.0, -4.0)
ACTION_LIMIT = 4.0
HORIZON = 2.0  # s
SUBSTEP = 0.1  # s
BUCKETS = ("pass", "stop")  # P_Pass > 0.5, P_Pass <= 0.5


@dataclass(frozen=True)
class ManeuverScenario:
    ego_id: int
    frame: int
    kind: str  # "pass" if the ego really cleared the line without Red, else "stop"
    p_pass: float

    @property
    def bucket(self) -> str:
        return "pass" if self.p_pass > 0.5 else "stop"


@dataclass(frozen=True)
class ManeuverTable:
    cells: dict[tuple[str, float], float]  # (bucket, action) -> collision-free percentage
    counts: dict[str, int]

    def best_action(self, bucket: str) -> float:
        row = [(self.cells[(bucket, a)], -i, a) for i, a in enumerate(ACTIONS) if (bucket, a) in self.cells]
        return max(row)[2]

    def rows(self) -> list[tuple[str, float, float, int]]:
        return [(b, a, self.cells[(b, a)], self.counts[b]) for b in BUCKETS for a in ACTIONS if (b, a) in self.cells]


def sample_scenarios(trajectories: Sequence[Trajectory], events: Iterable[DzEvent], predictor: Predictor,
                     params: GnnParams, n_per_kind: int = 100, seed: int = 0) -> list[ManeuverScenario]:
    """Draw ``n_per_kind`` pass and stop cases from the first frame of each truth event."""
    events = list(events)
    rmap, sp = predictor.rmap, predictor.signal_params
    labels = forecast_labels(trajectories, events, rmap, sp, predictor.config.horizon_steps)
    _, frames = scenes_by_frame(trajectories)
    pools: dict[str, list[ManeuverScenario]] = {"pass": [], "stop": []}
    for e in sorted(events, key=lambda e: (e.agent_id, e.frame_start)):
        f = e.frame_start
        kind = "pass" if labels[(e.agent_id, f)][2] else "stop"
        probs = forecast(build_scene_graph(frames[f], rmap, sp), params)
        pools[kind].append(ManeuverScenario(e.agent_id, f, kind, probs.of(e.agent_id)[2]))
    rng = np.random.default_rng(seed)
    out = []
    for kind in ("pass", "stop"):
        pool = pools[kind]
        if len(pool) < n_per_kind:
            raise SampleShortfallError(f"only {len(pool)} {kind} cases, {n_per_kind} requested")
        pick = sorted(rng.choice(len(pool), size=n_per_kind, replace=False))
        out += [pool[i] for i in pick]
    return out


def _ego_profile(v0: float, a: float, t: float) -> tuple[float, float]:
    """Distance and speed after ``t`` seconds of constant ``a`` with a speed floor at zero."""
    if a < 0 and v0 + a * t < 0:
        t_stop = v0 / -a
        return v0 * t_stop + 0.5 * a * t_stop**2, 0.0
    return v0 * t + 0.5 * a * t * t, v0 + a * t


def _state_on_path(path, s: float, v: float, a: float, length: float, width: float) -> AgentState:
    p = path.point_at(s)
    h = path.heading_at(s)
    c, sn = math.cos(h), math.sin(h)
    return AgentState(p, Vec2(v * c, v * sn), Vec2(a * c, a * sn), h, length, width)


def _kinematic_state(prev: AgentState, pos: Vec2, dt: float) -> AgentState:
    vel = (pos - prev.position) * (1.0 / dt)
    heading = vel.angle() if vel.norm() > 1e-6 else prev.heading
    return AgentState(pos, vel, (vel - prev.velocity) * (1.0 / dt), heading, prev.length, prev.width)


def run_scenario(scenario: ManeuverScenario, histories: Mapping[int, Trajectory],
                 scene: Mapping[int, AgentState], predictor: Predictor, action: float,
                 horizon: float = HORIZON, substep: float = SUBSTEP) -> bool:
    """True when the ego never touches another vehicle during the maneuver."""
    a = min(max(action, -ACTION_LIMIT), ACTION_LIMIT)
    dt = predictor.config.dt
    ego0 = scene[scenario.ego_id]
    path, s0, _ = path_for(ego0, predictor.rmap)
    others = {aid: histories[aid] for aid in sorted(scene) if aid != scenario.ego_id}
    n_frames = int(round(horizon / dt))
    n_sub = max(1, int(round(dt / substep)))
    current = dict(scene)
    t0 = histories[scenario.ego_id].states[-1][0]
    for k in range(n_frames):
        # re-plan every other vehicle from its (simulated) history and the current scene
        targets = {}
        for aid, hist in others.items():
            st = current[aid]
            if len(hist) >= predictor.config.history_steps + 1:
                pred = predictor.predict(hist, current)
            else:
                # too little history to predict: keep rolling forward along the current path
                pred = rollout_mode(st, Mode.PROCEED, None, predictor.signal_params.dz,
                                    predictor.config, predictor.rmap)
            targets[aid] = pred.positions[0]
        for j in range(1, n_sub + 1):
            frac = j / n_sub
            t = (k + frac) * dt
            ds, v = _ego_profile(ego0.speed, a, t)
            ego = _state_on_path(path, s0 + ds, v, a, ego0.length, ego0.width)
            for aid in others:
                p = current[aid].position + (targets[aid] - current[aid].position) * frac
                if collision_check(ego, AgentState(p, length=current[aid].length, width=current[aid].width)):
                    return False
        t_next = t0 + (k + 1) * dt
        ds, v = _ego_profile(ego0.speed, a, (k + 1) * dt)
        nxt = {scenario.ego_id: _state_on_path(path, s0 + ds, v, a, ego0.length, ego0.width)}
        for aid, hist in others.items():
            st = _kinematic_state(current[aid], targets[aid], dt)
            nxt[aid] = st
            others[aid] = Trajectory(aid, dt, hist.states[-predictor.config.history_steps:] + ((t_next, st),))
        current = nxt
    return True


def _history(traj: Trajectory, frame: int, steps: int) -> Trajectory:
    i = frame - traj.start_frame
    return traj.segment(max(0, i - steps), i + 1)


def maneuver_experiment(scenarios: Sequence[ManeuverScenario], trajectories: Sequence[Trajectory],
                        predictor: Predictor, actions: Sequence[float] = ACTIONS,
                        horizon: float = HORIZON) -> ManeuverTable:
    """Collision-free percentage per (P_Pass bucket, action)."""
    if not scenarios:
        raise SampleShortfallError("no maneuver scenarios")
    by_id = {tr.agent_id: tr for tr in trajectories}
    _, frames = scenes_by_frame(trajectories)
    h = predictor.config.history_steps
    wins = {(b, float(a)): 0 for b in BUCKETS for a in actions}
    counts = {b: 0 for b in BUCKETS}
    for sc in scenarios:
        scene = frames[sc.frame]
        hist = {aid: _history(by_id[aid], sc.frame, h) for aid in scene}
        counts[sc.bucket] += 1
        for a in actions:
            wins[(sc.bucket, float(a))] += run_scenario(sc, hist, scene, predictor, a, horizon)
    cells = {key: 100.0 * n / counts[key[0]] for key, n in wins.items() if counts[key[0]] > 0}
    return ManeuverTable(cells, counts)
