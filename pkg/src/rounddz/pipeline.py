"""End-to-end steps shared by the command line and the acceptance suite.

simulate -> label -> split by agent -> mine and balance -> train -> detect ->
evaluate, plus the forecaster and maneuver steps.  Every function is a pure
function of its inputs and the seeds inside the config.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import RunConfig
from .deviation import (
    DzDetection,
    MlpParams,
    TrainConfig,
    TrainingSet,
    WindowSample,
    balance,
    detect_windows,
    deviation_floor,
    label_windows,
    mlp_train,
    score_windows,
    sliding_windows,
)
from .errors import DegenerateLabelsError
from .forecaster import (
    HEADS,
    GnnParams,
    LabeledScene,
    advise_maneuver,
    build_scene_graph,
    forecast,
    forecast_batch,
    labeled_scenes,
    train_forecaster,
)
from .geometry import RoundaboutMap, Trajectory, build_roundabout
from .maneuver import ManeuverTable, maneuver_experiment, sample_scenarios
from .metrics import ClassificationReport, RocCurve, classification_report, frame_intervals, roc_points, temporal_iou
from .predictor import Predictor
from .signal import DzEvent, label_dz_events, scenes_by_frame
from .sim import SimResult, simulate


def make_map(cfg: RunConfig) -> RoundaboutMap:
    return build_roundabout(**dataclasses.asdict(cfg.map))


def make_predictor(cfg: RunConfig, rmap: RoundaboutMap | None = None, weights=None) -> Predictor:
    return Predictor(rmap or make_map(cfg), cfg.predictor, cfg.signal_params, weights)


def run_simulation(cfg: RunConfig) -> SimResult:
    return simulate(make_map(cfg), cfg.sim_config())


def relabel(trajectories: Sequence[Trajectory], cfg: RunConfig) -> list[DzEvent]:
    return label_dz_events(trajectories, make_map(cfg), cfg.signal_params)


def split_agents(agent_ids: Iterable[int], test_fraction: float) -> tuple[set[int], set[int]]:
    """Lower agent ids train, the rest test; agents enter in id order, so this splits in time."""
    ids = sorted(set(agent_ids))
    n_train = int(round(len(ids) * (1.0 - test_fraction)))
    return set(ids[:n_train]), set(ids[n_train:])


# -- detector ------------------------------------------------------------------------

@dataclass
class DetectorModel:
    params: MlpParams
    mining_threshold: float
    min_total: float  # smallest non-DZ training deviation; quieter windows are never flagged
    train: TrainConfig
    test_fraction: float

    def to_dict(self) -> dict:
        return {"weights": self.params.to_dict(), "mining_threshold": self.mining_threshold,
                "min_total": self.min_total, "train": dataclasses.asdict(self.train),
                "test_fraction": self.test_fraction}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorModel":
        return cls(MlpParams.from_dict(d["weights"]), float(d["mining_threshold"]), float(d["min_total"]),
                   TrainConfig(**d["train"]), float(d["test_fraction"]))


@dataclass(frozen=True)
class WindowSplit:
    train: list[WindowSample]
    test: list[WindowSample]
    train_ids: set[int]
    test_ids: set[int]


def labeled_windows(trajectories: Sequence[Trajectory], events: Iterable[DzEvent],
                    predictor: Predictor) -> list[WindowSample]:
    return label_windows(sliding_windows(trajectories, predictor), events, predictor.config.horizon_steps)


def split_windows(windows: Sequence[WindowSample], trajectories: Sequence[Trajectory],
                  test_fraction: float) -> WindowSplit:
    train_ids, test_ids = split_agents((tr.agent_id for tr in trajectories), test_fraction)
    return WindowSplit([w for w in windows if w.agent_id in train_ids],
                       [w for w in windows if w.agent_id in test_ids], train_ids, test_ids)


def train_detector(train_windows: Sequence[WindowSample], cfg: RunConfig) -> tuple[DetectorModel, TrainingSet, list[float]]:
    det = cfg.detector
    training = balance(train_windows, det.mining_threshold)
    params, losses = mlp_train(training.x, training.y, det.train)
    model = DetectorModel(params, det.mining_threshold, deviation_floor(training), det.train, det.test_fraction)
    return model, training, losses


def run_detector(windows: Sequence[WindowSample], model: DetectorModel) -> list[DzDetection]:
    return detect_windows(windows, model.params, model.mining_threshold, model.min_total)


@dataclass(frozen=True)
class DetectorEvaluation:
    report: ClassificationReport
    roc: RocCurve
    baseline_roc: RocCurve  # raw total deviation as the score
    iou: float
    ade: float
    fde: float
    n_test: int
    detections: tuple[DzDetection, ...]

    def rows(self) -> list[tuple[str, float]]:
        return self.report.rows() + [
            ("auc", self.roc.auc), ("baseline_auc", self.baseline_roc.auc), ("iou", self.iou),
            ("ade", self.ade), ("fde", self.fde), ("test_windows", self.n_test),
            ("detections", len(self.detections)),
        ]


def evaluate_detections(detections: Iterable[DzDetection], events: Iterable[DzEvent]) -> float:
    """Temporal IoU of detected intervals against truth events, frame by frame."""
    det = frame_intervals((d.agent_id, d.frame_start, d.frame_end) for d in detections)
    truth = frame_intervals((e.agent_id, e.frame_start, e.frame_end) for e in events)
    return temporal_iou(det, truth)


def evaluate_detector(model: DetectorModel, test_windows: Sequence[WindowSample],
                      test_events: Iterable[DzEvent]) -> DetectorEvaluation:
    """Window decisions and ROC on the balanced mined test windows, IoU on the merged detections."""
    test_set = balance(test_windows, model.mining_threshold)
    labels = test_set.y > 0.5
    scores = score_windows(test_set.samples, model.params)
    report = classification_report(scores > 0.5, labels)
    roc = roc_points(scores, labels)
    baseline = roc_points([w.deviation.total for w in test_set.samples], labels)
    detections = run_detector(test_windows, model)
    iou = evaluate_detections(detections, test_events)
    errors = np.array([w.deviation.per_step for w in test_windows]) if test_windows else np.zeros((1, 1))
    return DetectorEvaluation(report, roc, baseline, iou, float(errors.mean()), float(errors[:, -1].mean()),
                              len(test_set), tuple(detections))


# -- forecaster ----------------------------------------------------------------------

def forecaster_scenes(trajectories: Sequence[Trajectory], events: Iterable[DzEvent], cfg: RunConfig,
                      rmap: RoundaboutMap | None = None) -> list[LabeledScene]:
    return labeled_scenes(trajectories, events, rmap or make_map(cfg), cfg.signal_params,
                          cfg.predictor.horizon_steps, cfg.forecaster.stride)


def split_scenes(scenes: Sequence[LabeledScene], test_fraction: float) -> tuple[list[LabeledScene], list[LabeledScene]]:
    """Earlier frames train, later frames test."""
    n_train = int(round(len(scenes) * (1.0 - test_fraction)))
    return list(scenes[:n_train]), list(scenes[n_train:])


def fit_forecaster(scenes: Sequence[LabeledScene], cfg: RunConfig) -> tuple[GnnParams, list[float]]:
    fc = cfg.forecaster
    return train_forecaster(scenes, fc.train, fc.hidden, fc.rounds)


def forecaster_aucs(scenes: Sequence[LabeledScene], params: GnnParams) -> dict[str, float]:
    """Per-head ROC AUC; a head whose labels hold one class reports NaN."""
    scenes = [s for s in scenes if len(s.labels)]
    if not scenes:
        return {h: float("nan") for h in HEADS}
    p = forecast_batch([s.graph for s in scenes], params)
    y = np.vstack([s.labels for s in scenes]) > 0.5
    out = {}
    for k, head in enumerate(HEADS):
        try:
            out[head] = roc_points(p[:, k], y[:, k]).auc
        except DegenerateLabelsError:
            out[head] = float("nan")
    return out


def forecast_rows(trajectories: Sequence[Trajectory], params: GnnParams, cfg: RunConfig) -> list[tuple]:
    """(frame, time, agent, p_dilemma, p_causal, p_pass, advice, magnitude) for every agent and frame."""
    rmap = make_map(cfg)
    dt, frames = scenes_by_frame(trajectories)
    rows = []
    for f in sorted(frames):
        graph = build_scene_graph(frames[f], rmap, cfg.signal_params)
        probs = forecast(graph, params)
        for aid, pd, pc, pp in zip(probs.agent_ids, probs.p_dilemma, probs.p_causal, probs.p_pass):
            advice = advise_maneuver(pd, pp)
            rows.append((f, f * dt, aid, pd, pc, pp, advice.action.value, advice.magnitude))
    return rows


# -- maneuver study --------------------------------------------------------------------

def maneuver_study(trajectories: Sequence[Trajectory], events: Sequence[DzEvent], params: GnnParams,
                   cfg: RunConfig, predictor: Predictor | None = None) -> ManeuverTable:
    predictor = predictor or make_predictor(cfg)
    scenarios = sample_scenarios(trajectories, events, predictor, params, cfg.maneuver.n_per_kind, cfg.seed)
    return maneuver_experiment(scenarios, trajectories, predictor, horizon=cfg.maneuver.horizon)
