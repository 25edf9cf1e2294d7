"""Mode-conditioned most-likely trajectory prediction.

Prediction runs in two stages: pick the most probable behavior mode from a
softmax over linear scores, then roll out that mode's kinematics along the
vehicle's path.  Speed, longitudinal acceleration, distance to the yield line
and the virtual signal are the score features; the distance and signal entries
can be switched off to get the feature-ablated baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .dilemma import DzParams
from .errors import HorizonMismatchError, InsufficientHistoryError
from .geometry import (
    AgentState,
    ApproachLeg,
    Polyline,
    RoundaboutMap,
    Trajectory,
    Vec2,
    leg_path,
    path_for,
)
from .signal import SignalParams, SignalState, annotate

CREEP_SPEED = 2.0  # m/s
DIST_RANGE = (-10.0, 40.0)  # clip range for the distance feature; off-leg vehicles sit at the floor
N_FEATURES = 7


class Mode(str, Enum):
    PROCEED = "proceed"
    YIELD = "yield"
    STOP = "stop"


MODES = (Mode.PROCEED, Mode.YIELD, Mode.STOP)  # also the argmax tie-break order

# rows follow MODES; columns: speed, lon. accel, distance, red, yellow, green, bias.
# Stop beats Proceed under Red roughly where the distance left exceeds the
# stopping distance (linearized over 15-25 mph); Yellow selects Yield.
DEFAULT_MODE_WEIGHTS = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, -20.0, 20.0, -20.0, 0.0],
    [-3.94, -0.5, 1.0, 12.3, -60.0, -60.0, 0.0],
])

# without distance and signal features only braking hints at a stop
ABLATED_MODE_WEIGHTS = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -10.0],
    [0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -2.0],
])


@dataclass(frozen=True)
class PredictorConfig:
    history_steps: int = 3
    horizon_steps: int = 4
    dt: float = 0.5
    use_dz_features: bool = True

    def __post_init__(self):
        if self.history_steps < 1 or self.horizon_steps < 1 or not self.dt > 0:
            raise ValueError("history_steps, horizon_steps >= 1 and dt > 0 required")


@dataclass(frozen=True)
class ModeDistribution:
    probabilities: dict[Mode, float]
    scores: tuple[float, ...]
    feature_weights: np.ndarray = field(repr=False, compare=False)

    def argmax(self) -> Mode:
        best = max(self.scores)
        return MODES[self.scores.index(best)]


@dataclass(frozen=True)
class PredictedTrajectory:
    positions: tuple[Vec2, ...]
    dt: float
    mode: Mode
    origin: Vec2

    def array(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.positions])


def mode_features(history: Trajectory, signal: SignalState, dist_to_yield: float | None,
                  config: PredictorConfig) -> np.ndarray:
    if len(history) < config.history_steps + 1:
        raise InsufficientHistoryError(
            f"need {config.history_steps + 1} states, got {len(history)}")
    window = history.states[-(config.history_steps + 1):]
    current = window[-1][1]
    speed = current.speed
    lon_acc = (speed - window[-2][1].speed) / history.dt
    x = np.zeros(N_FEATURES)
    x[0], x[1], x[6] = speed, lon_acc, 1.0
    if config.use_dz_features:
        d = DIST_RANGE[0] if dist_to_yield is None else dist_to_yield
        x[2] = min(max(d, DIST_RANGE[0]), DIST_RANGE[1])
        x[3 + [SignalState.RED, SignalState.YELLOW, SignalState.GREEN].index(signal)] = 1.0
    return x


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = np.exp(scores - scores.max())
    return z / z.sum()


def estimate_mode_distribution(history: Trajectory, signal: SignalState, dist_to_yield: float | None,
                               config: PredictorConfig, weights: np.ndarray | None = None) -> ModeDistribution:
    if weights is None:
        weights = DEFAULT_MODE_WEIGHTS if config.use_dz_features else ABLATED_MODE_WEIGHTS
    scores = weights @ mode_features(history, signal, dist_to_yield, config)
    probs = _softmax(scores)
    return ModeDistribution({m: float(p) for m, p in zip(MODES, probs)},
                            tuple(float(s) for s in scores), weights)


def travel_profile(v0: float, mode: Mode, dz: DzParams, times: np.ndarray) -> np.ndarray:
    """Distance covered along the path at each time for the mode's speed law."""
    t = np.asarray(times, dtype=float)
    if mode is Mode.PROCEED or v0 <= 0:
        return v0 * t
    if mode is Mode.STOP:
        a = dz.a_dec
        t_stop = v0 / a
        return np.where(t < t_stop, v0 * t - 0.5 * a * t**2, v0 * v0 / (2 * a))
    a = 0.5 * dz.a_dec
    if v0 <= CREEP_SPEED:
        return v0 * t
    t1 = (v0 - CREEP_SPEED) / a
    s1 = v0 * t1 - 0.5 * a * t1**2
    return np.where(t < t1, v0 * t - 0.5 * a * t**2, s1 + CREEP_SPEED * (t - t1))


def _extended(path: Polyline) -> Polyline:
    d = path.segments[-1] / path.seg_lengths[-1]
    return Polyline(np.vstack([path.points, path.points[-1] + 1000.0 * d]))


def rollout_mode(current: AgentState, mode: Mode, leg: ApproachLeg | None, dz: DzParams,
                 config: PredictorConfig, rmap: RoundaboutMap | None = None) -> PredictedTrajectory:
    """Most-likely positions over the horizon when the vehicle follows ``mode``."""
    if leg is not None:
        path = _extended(leg_path(leg, rmap) if rmap is not None else leg.polyline)
        s0, _ = path.project(current.position, prefer_s=leg.yield_s)
    elif rmap is not None:
        path, s0, _ = path_for(current, rmap)
    else:
        path, s0, _ = path_for_heading(current)
    times = config.dt * np.arange(1, config.horizon_steps + 1)
    s = s0 + travel_profile(current.speed, mode, dz, times)
    pts = path.points_at(s)
    return PredictedTrajectory(tuple(Vec2(float(x), float(y)) for x, y in pts), config.dt, mode,
                               current.position)


def path_for_heading(state: AgentState) -> tuple[Polyline, float, None]:
    p, h = state.position, state.heading
    return Polyline([(p.x, p.y), (p.x + 1000.0 * math.cos(h), p.y + 1000.0 * math.sin(h))]), 0.0, None


@dataclass
class Predictor:
    """Bundles map, configuration and mode weights for repeated prediction."""

    rmap: RoundaboutMap
    config: PredictorConfig = field(default_factory=PredictorConfig)
    signal_params: SignalParams = field(default_factory=SignalParams)
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.weights is None:
            base = DEFAULT_MODE_WEIGHTS if self.config.use_dz_features else ABLATED_MODE_WEIGHTS
            self.weights = base.copy()
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(MODES), N_FEATURES):
            raise ValueError(f"mode weights must have shape {(len(MODES), N_FEATURES)}")

    def mode_distribution(self, history: Trajectory, scene: Mapping[int, AgentState]) -> ModeDistribution:
        current = history.states[-1][1]
        info = annotate(current, scene, self.rmap, self.signal_params)
        return estimate_mode_distribution(history, info.signal, info.dist_to_yield, self.config, self.weights)

    def predict(self, history: Trajectory, scene: Mapping[int, AgentState]) -> PredictedTrajectory:
        current = history.states[-1][1]
        info = annotate(current, scene, self.rmap, self.signal_params)
        dist = estimate_mode_distribution(history, info.signal, info.dist_to_yield, self.config, self.weights)
        return rollout_mode(current, dist.argmax(), info.leg, self.signal_params.dz, self.config, self.rmap)


def predict_most_likely(history: Trajectory, scene: Mapping[int, AgentState], rmap: RoundaboutMap,
                        config: PredictorConfig, weights: np.ndarray | None = None,
                        signal_params: SignalParams | None = None) -> PredictedTrajectory:
    predictor = Predictor(rmap, config, signal_params or SignalParams(), weights)
    return predictor.predict(history, scene)


def _truth_positions(truth: Trajectory | Sequence, horizon: int) -> np.ndarray:
    if isinstance(truth, Trajectory):
        pts = truth.positions()
    else:
        pts = np.array([[p.x, p.y] if isinstance(p, Vec2) else p for p in truth], dtype=float).reshape(-1, 2)
    if len(pts) < horizon:
        raise HorizonMismatchError(f"truth has {len(pts)} steps, horizon is {horizon}")
    return pts[:horizon]


def displacement_errors(pred: PredictedTrajectory, truth: Trajectory | Sequence) -> tuple[float, list[float]]:
    """ADE over the horizon and the per-step displacement errors (the last one is the FDE)."""
    p = pred.array()
    errors = np.hypot(*(p - _truth_positions(truth, len(p))).T)
    return float(errors.mean()), [float(e) for e in errors]
