"""Path-deviation mining and the shallow dilemma classifier.

A driver caught in a dilemma zone departs from what a model of normal driving
expects.  Each sliding window is predicted with the most-likely-trajectory
predictor, the per-step displacement from the truth is measured, and a
4-32-1 sigmoid network decides whether the deviation pattern belongs to a DZ
event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateLabelsError, EmptyMiningResultError
from .geometry import Trajectory, frame_index
from .predictor import PredictedTrajectory, Predictor, _truth_positions
from .signal import DzEvent, scenes_by_frame

N_INPUT = 4
N_HIDDEN = 32
DEVIATION_THRESHOLD = 0.8
DECISION_THRESHOLD = 0.5
ONSET_TOLERANCE = 0.5  # m; first predicted step deviating more than this marks the behavior change


@dataclass(frozen=True)
class DeviationSeries:
    per_step: tuple[float, ...]
    total: float
    ratio: float
    step_ratios: tuple[float, ...]

    @property
    def peak_ratio(self) -> float:
        return max(self.step_ratios)

    def onset_step(self, tolerance: float = ONSET_TOLERANCE) -> int:
        """Zero-based index of the first step whose deviation exceeds ``tolerance``."""
        for k, e in enumerate(self.per_step):
            if e > tolerance:
                return k
        return len(self.per_step) - 1


def _ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


def path_deviation(pred: PredictedTrajectory, truth: Trajectory | Sequence) -> DeviationSeries:
    """Per-step L2 deviations, their sum, and the deviation ratio.

    Ratios compare the deviation with the truth displacement measured from the
    position the prediction was made from.
    """
    p = pred.array()
    t = _truth_positions(truth, len(p))
    err = np.hypot(*(p - t).T)
    disp = t - pred.origin.as_array()
    disp_norm = np.hypot(*disp.T)
    ratio = _ratio(float(np.sqrt((err**2).sum())), float(np.sqrt((disp_norm**2).sum())))
    steps = tuple(_ratio(float(e), float(d)) for e, d in zip(err, disp_norm))
    return DeviationSeries(tuple(float(e) for e in err), float(err.sum()), ratio, steps)


# -- classifier ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs and batch_size must be positive, learning_rate non-negative")


@dataclass
class MlpParams:
    w1: np.ndarray  # (4, 32)
    b1: np.ndarray  # (32,)
    w2: np.ndarray  # (32, 1)
    b2: np.ndarray  # (1,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=float).reshape(N_INPUT, N_HIDDEN)
        self.b1 = np.asarray(self.b1, dtype=float).reshape(N_HIDDEN)
        self.w2 = np.asarray(self.w2, dtype=float).reshape(N_HIDDEN, 1)
        self.b2 = np.asarray(self.b2, dtype=float).reshape(1)
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")

    @classmethod
    def zeros(cls) -> "MlpParams":
        return cls(np.zeros((N_INPUT, N_HIDDEN)), np.zeros(N_HIDDEN), np.zeros((N_HIDDEN, 1)), np.zeros(1))

    @classmethod
    def init(cls, seed: int) -> "MlpParams":
        rng = np.random.default_rng(seed)
        k1, k2 = 1.0 / math.sqrt(N_INPUT), 1.0 / math.sqrt(N_HIDDEN)
        return cls(rng.uniform(-k1, k1, (N_INPUT, N_HIDDEN)), rng.uniform(-k1, k1, N_HIDDEN),
                   rng.uniform(-k2, k2, (N_HIDDEN, 1)), rng.uniform(-k2, k2, 1))

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, v: np.ndarray) -> "MlpParams":
        i = N_INPUT * N_HIDDEN
        return cls(v[:i], v[i:i + N_HIDDEN], v[i + N_HIDDEN:i + 2 * N_HIDDEN], v[-1:])

    def to_dict(self) -> dict:
        return {"w1": self.w1.tolist(), "b1": self.b1.tolist(), "w2": self.w2.tolist(), "b2": self.b2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        return cls(np.array(d["w1"]), np.array(d["b1"]), np.array(d["w2"]), np.array(d["b2"]))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def mlp_forward(params: MlpParams, inputs: np.ndarray | Sequence[float]) -> np.ndarray | float:
    """Dilemma score in (0, 1) for one deviation vector or a batch of them."""
    x = np.asarray(inputs, dtype=float)
    single = x.ndim == 1
    g = sigmoid(np.atleast_2d(x) @ params.w1 + params.b1)
    z = sigmoid(g @ params.w2 + params.b2)[:, 0]
    return float(z[0]) if single else z


def _bce(z: np.ndarray, y: np.ndarray) -> float:
    eps = 1e-12
    return float(-np.mean(y * np.log(z + eps) + (1 - y) * np.log(1 - z + eps)))


def mlp_loss_and_grad(params: MlpParams, x: np.ndarray, y: np.ndarray) -> tuple[float, MlpParams]:
    """Mean binary cross-entropy and its analytic gradient."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(x)
    g = sigmoid(x @ params.w1 + params.b1)
    z = sigmoid(g @ params.w2 + params.b2)[:, 0]
    dlogit = ((z - y) / n)[:, None]  # sigmoid + BCE collapse to z - y
    dw2 = g.T @ dlogit
    db2 = dlogit.sum(axis=0)
    dg = dlogit @ params.w2.T
    dh = dg * g * (1 - g)
    dw1 = x.T @ dh
    db1 = dh.sum(axis=0)
    return _bce(z, y), MlpParams(dw1, db1, dw2, db2)


def mlp_train(x: np.ndarray, y: np.ndarray, config: TrainConfig,
              init: MlpParams | None = None) -> tuple[MlpParams, list[float]]:
    """Mini-batch gradient descent on binary cross-entropy; returns params and per-epoch loss."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise DegenerateLabelsError("training labels contain a single class")
    params = (init or MlpParams.init(config.seed)).copy()
    rng = np.random.default_rng(config.seed + 1)
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grad = mlp_loss_and_grad(params, x[idx], y[idx])
            params.w1 -= config.learning_rate * grad.w1
            params.b1 -= config.learning_rate * grad.b1
            params.w2 -= config.learning_rate * grad.w2
            params.b2 -= config.learning_rate * grad.b2
        losses.append(_bce(mlp_forward(params, x), y))
    return params, losses


# -- sliding windows and mining -------------------------------------------------

@dataclass(frozen=True)
class WindowSample:
    agent_id: int
    anchor_frame: int  # last observed frame; the prediction starts here
    deviation: DeviationSeries
    label: bool = False

    @property
    def features(self) -> np.ndarray:
        return np.array(self.deviation.per_step)

    @property
    def onset_frame(self) -> int:
        # step k predicts the transition out of frame anchor + k
        return self.anchor_frame + self.deviation.onset_step()


def sliding_windows(trajectories: Iterable[Trajectory], predictor: Predictor) -> list[WindowSample]:
    """Predict every full (history, horizon) window and measure its deviation."""
    trajectories = list(trajectories)
    _, frames = scenes_by_frame(trajectories)
    h, horizon = predictor.config.history_steps, predictor.config.horizon_steps
    samples = []
    for traj in sorted(trajectories, key=lambda tr: tr.agent_id):
        for i in range(h, len(traj) - horizon):
            t_anchor = traj.states[i][0]
            f = frame_index(t_anchor, traj.dt)
            pred = predictor.predict(traj.segment(i - h, i + 1), frames[f])
            dev = path_deviation(pred, traj.segment(i + 1, i + 1 + horizon))
            samples.append(WindowSample(traj.agent_id, f, dev))
    return samples


def _event_frames(events: Iterable[DzEvent]) -> dict[int, list[tuple[int, int]]]:
    spans: dict[int, list[tuple[int, int]]] = {}
    for e in events:
        spans.setdefault(e.agent_id, []).append((e.frame_start, e.frame_end))
    return spans


def label_windows(samples: Iterable[WindowSample], events: Iterable[DzEvent], horizon: int) -> list[WindowSample]:
    """A window is DZ when a truth event covers a frame whose outgoing motion it predicts.

    Those are the anchor frame and the next ``horizon - 1`` frames.
    """
    spans = _event_frames(events)
    out = []
    for w in samples:
        lo, hi = w.anchor_frame, w.anchor_frame + horizon - 1
        hit = any(a <= hi and b >= lo for a, b in spans.get(w.agent_id, ()))
        out.append(WindowSample(w.agent_id, w.anchor_frame, w.deviation, hit))
    return out


def mine_windows(samples: Iterable[WindowSample], threshold: float = DEVIATION_THRESHOLD) -> list[WindowSample]:
    """Windows whose deviation ratio exceeds ``threshold`` at one or more steps.

    A non-positive threshold disables the filter.
    """
    if threshold <= 0:
        return list(samples)
    return [w for w in samples if w.deviation.peak_ratio > threshold]


@dataclass
class TrainingSet:
    samples: list[WindowSample] = field(default_factory=list)

    @property
    def x(self) -> np.ndarray:
        return np.array([w.deviation.per_step for w in self.samples]).reshape(-1, N_INPUT)

    @property
    def y(self) -> np.ndarray:
        return np.array([float(w.label) for w in self.samples])

    def __len__(self) -> int:
        return len(self.samples)

    def counts(self) -> tuple[int, int]:
        pos = sum(w.label for w in self.samples)
        return pos, len(self.samples) - pos


def _by_deviation(w: WindowSample):
    return (-w.deviation.total, w.agent_id, w.anchor_frame)


def balance(labeled: Sequence[WindowSample], threshold: float = DEVIATION_THRESHOLD) -> TrainingSet:
    """Equal DZ / non-DZ counts from labeled windows.

    All mined DZ windows are kept and matched by the largest-deviation mined
    non-DZ windows; if those run short, the largest unmined non-DZ windows
    fill in, and only then are the smallest DZ windows dropped.
    """
    mined = mine_windows(labeled, threshold)
    if not mined:
        raise EmptyMiningResultError(f"no window deviates by more than {threshold}")
    dz = sorted((w for w in mined if w.label), key=_by_deviation)
    non = sorted((w for w in mined if not w.label), key=_by_deviation)
    if len(non) < len(dz):
        mined_keys = {(w.agent_id, w.anchor_frame) for w in mined}
        spare = sorted((w for w in labeled if not w.label and (w.agent_id, w.anchor_frame) not in mined_keys),
                       key=_by_deviation)
        non += spare[:len(dz) - len(non)]
    n = min(len(dz), len(non))
    chosen = dz[:n] + non[:n]
    chosen.sort(key=lambda w: (w.agent_id, w.anchor_frame))
    return TrainingSet(chosen)


def build_training_set(trajectories: Iterable[Trajectory], predictor: Predictor, events: Iterable[DzEvent],
                       threshold: float = DEVIATION_THRESHOLD) -> TrainingSet:
    samples = sliding_windows(trajectories, predictor)
    labeled = label_windows(samples, events, predictor.config.horizon_steps)
    return balance(labeled, threshold)


# -- detection ---------------------------------------------------------------

@dataclass(frozen=True)
class DzDetection:
    agent_id: int
    frame_start: int
    frame_end: int
    score: float

    @property
    def decision(self) -> bool:
        return self.score > DECISION_THRESHOLD


def score_windows(samples: Sequence[WindowSample], params: MlpParams) -> np.ndarray:
    if not samples:
        return np.zeros(0)
    return mlp_forward(params, np.array([w.deviation.per_step for w in samples]).reshape(-1, N_INPUT))


def merge_detections(hits: Iterable[tuple[int, int, float]], max_gap: int = 1) -> list[DzDetection]:
    """Merge (agent, frame, score) hits into intervals when frames are at most ``max_gap`` apart."""
    out: list[DzDetection] = []
    for agent, frame, score in sorted(hits):
        last = out[-1] if out else None
        if last is not None and last.agent_id == agent and frame - last.frame_end <= max_gap + 1:
            out[-1] = DzDetection(agent, last.frame_start, frame, max(last.score, score))
        else:
            out.append(DzDetection(agent, frame, frame, score))
    return out


def deviation_floor(training: TrainingSet) -> float:
    """Smallest total deviation among the non-DZ training windows.

    Windows that deviate less than every negative the classifier was shown lie
    outside its training distribution; detection skips them.
    """
    totals = [w.deviation.total for w in training.samples if not w.label]
    return min(totals) if totals else 0.0


def detect_windows(samples: Sequence[WindowSample], params: MlpParams,
                   min_ratio: float = DEVIATION_THRESHOLD, min_total: float = 0.0) -> list[DzDetection]:
    # windows without a step beyond the onset tolerance show no behavior change to classify
    candidates = [w for w in mine_windows(samples, min_ratio)
                  if max(w.deviation.per_step) > ONSET_TOLERANCE and w.deviation.total >= min_total]
    scores = score_windows(candidates, params)
    hits = [(w.agent_id, w.onset_frame, float(s)) for w, s in zip(candidates, scores) if s > DECISION_THRESHOLD]
    return merge_detections(hits)


def detect(trajectories: Iterable[Trajectory], predictor: Predictor, params: MlpParams,
           min_ratio: float = DEVIATION_THRESHOLD, min_total: float = 0.0) -> list[DzDetection]:
    """Score every abnormal window and report merged DZ intervals at their onset frames."""
    return detect_windows(sliding_windows(trajectories, predictor), params, min_ratio, min_total)
