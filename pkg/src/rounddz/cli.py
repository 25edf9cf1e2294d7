"""``rounddz`` command line.

Every command reads and writes plain files in a run directory::

    rounddz simulate --output run
    rounddz mine --input run
    rounddz train-detector --input run
    rounddz evaluate --input run

Failures print one line, ``error: <code>: <message>``, and exit with status 1.
"""

from __future__ import annotations

import functools
import logging
import os
import sys
from pathlib import Path

import click

from . import io, pipeline, plots
from .config import RunConfig, dump_config, load_config
from .deviation import DzDetection, balance
from .errors import DzError, SchemaError
from .forecaster import GnnParams
from .geometry import Trajectory
from .signal import DzEvent

log = logging.getLogger("rounddz")

TRAJECTORIES = "trajectories.csv"
EVENTS = "events.csv"
WINDOWS = "windows.csv"
MODEL = "model.json"


def _setup_logging() -> None:
    level = os.environ.get("DZ_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(code: str, message: str) -> None:
    click.echo(f"error: {code}: {' '.join(str(message).split())}", err=True)
    sys.exit(1)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DzError as exc:
            _fail(exc.code, str(exc))
        except FileNotFoundError as exc:
            _fail("io", f"{exc.filename}: no such file")
    return wrapper


class Run:
    """Resolved options of one command: config, input directory and output directory."""

    def __init__(self, config: str | None, seed: int | None, input_: str | None, output: str | None):
        self.cfg: RunConfig = load_config(config).with_seed(seed)
        self.input = Path(input_) if input_ else None
        if self.input is not None and self.input.is_file():
            self.input_dir = self.input.parent
            self.traj_path = self.input
        else:
            self.input_dir = self.input
            self.traj_path = self.input / TRAJECTORIES if self.input else None
        out = output or (str(self.input_dir) if self.input_dir else None)
        if out is None:
            raise SchemaError("--output is required")
        self.output = Path(out)
        self.output.mkdir(parents=True, exist_ok=True)
        self._traj: list[Trajectory] | None = None

    def need_input(self) -> Path:
        if self.input_dir is None:
            raise SchemaError("--input is required")
        return self.input_dir

    def trajectories(self) -> list[Trajectory]:
        if self._traj is None:
            self.need_input()
            self._traj = io.load_trajectories(self.traj_path, self.cfg.columns)
        return self._traj

    def dt(self) -> float:
        trs = self.trajectories()
        return trs[0].dt if trs else self.cfg.sim.dt

    def events(self) -> list[DzEvent]:
        path = self.need_input() / EVENTS
        if path.exists():
            return io.load_events(path, self.dt())
        log.info("no %s next to the input; labeling events from trajectories", EVENTS)
        return pipeline.relabel(self.trajectories(), self.cfg)

    def windows(self, events: list[DzEvent] | None = None):
        path = self.need_input() / WINDOWS
        if path.exists():
            return io.load_windows(path)
        log.info("computing deviation windows")
        events = self.events() if events is None else events
        return pipeline.labeled_windows(self.trajectories(), events, pipeline.make_predictor(self.cfg))

    def out(self, name: str) -> Path:
        return self.output / name


def common(fn):
    fn = click.option("--config", "config", type=click.Path(dir_okay=False), help="YAML run configuration.")(fn)
    fn = click.option("--seed", type=int, help="Override the configured seed.")(fn)
    fn = click.option("--input", "input_", type=click.Path(), help="Run directory or trajectory CSV.")(fn)
    fn = click.option("--output", type=click.Path(file_okay=False), help="Output directory (default: input).")(fn)
    return fn


def with_model(required: bool):
    return click.option("--model", "model", type=click.Path(dir_okay=False), required=required,
                        help="Model file written by train-detector / train-forecaster.")


def _model_sections(path: str | Path | None) -> dict:
    if path is None or not Path(path).exists():
        return {}
    doc = io.load_model(path)
    return {k: v for k, v in doc.items() if k not in ("format", "version")}


def _detector(model_path: str | None, run: Run) -> pipeline.DetectorModel:
    sections = _model_sections(model_path or run.need_input() / MODEL)
    if "detector" not in sections:
        raise SchemaError("model has no detector section; run train-detector first")
    return pipeline.DetectorModel.from_dict(sections["detector"])


def _forecaster(model_path: str | None, run: Run) -> GnnParams:
    sections = _model_sections(model_path or run.need_input() / MODEL)
    if "forecaster" not in sections:
        raise SchemaError("model has no forecaster section; run train-forecaster first")
    return GnnParams.from_dict(sections["forecaster"]["weights"])


def _write_model(run: Run, model_path: str | None, **sections) -> Path:
    base = _model_sections(model_path or run.out(MODEL))
    base.update(sections)
    predictor = pipeline.make_predictor(run.cfg)
    base["predictor"] = {"history_steps": run.cfg.predictor.history_steps,
                         "horizon_steps": run.cfg.predictor.horizon_steps, "dt": run.cfg.predictor.dt,
                         "use_dz_features": run.cfg.predictor.use_dz_features,
                         "mode_weights": predictor.weights.tolist()}
    path = run.out(MODEL)
    io.save_model(path, base)
    return path


def _write_detections(path: Path, detections: list[DzDetection], dt: float) -> None:
    io.write_table(path, ("agent_id", "frame_start", "frame_end", "t_start", "t_end", "score"),
                   [(d.agent_id, d.frame_start, d.frame_end, d.frame_start * dt, d.frame_end * dt, d.score)
                    for d in detections])


@click.group()
def main() -> None:
    """Dilemma-zone mining, detection and forecasting at roundabouts."""
    _setup_logging()


@main.command()
@common
@guarded
def simulate(config, seed, input_, output):
    """Simulate traffic and write trajectories, truth events and collisions."""
    if output is None:
        raise SchemaError("--output is required")
    run = Run(config, seed, None, output)
    res = pipeline.run_simulation(run.cfg)
    io.write_trajectories(run.out(TRAJECTORIES), res.trajectories)
    io.write_events(run.out(EVENTS), res.ground_truth_events)
    io.write_table(run.out("collisions.csv"), ("time", "agent_a", "agent_b"),
                   [(c.time, *c.agents) for c in res.collisions])
    run.out("config.yaml").write_text(dump_config(run.cfg))
    click.echo(f"{len(res.trajectories)} vehicles, {len(res.ground_truth_events)} DZ events, "
               f"{len(res.collisions)} collisions -> {run.output}")


@main.command()
@common
@guarded
def mine(config, seed, input_, output):
    """Label DZ events, compute deviation windows and the balanced training set."""
    run = Run(config, seed, input_, output)
    trajectories = run.trajectories()
    events = pipeline.relabel(trajectories, run.cfg)
    io.write_events(run.out(EVENTS), events)
    windows = pipeline.labeled_windows(trajectories, events, pipeline.make_predictor(run.cfg))
    io.write_windows(run.out(WINDOWS), windows, run.cfg.predictor.horizon_steps)
    split = pipeline.split_windows(windows, trajectories, run.cfg.detector.test_fraction)
    training = balance(split.train, run.cfg.detector.mining_threshold)
    io.write_windows(run.out("training_set.csv"), training.samples, run.cfg.predictor.horizon_steps)
    pos, neg = training.counts()
    click.echo(f"{len(events)} events, {len(windows)} windows, training set {pos} DZ / {neg} non-DZ")


@main.command("train-detector")
@common
@with_model(False)
@guarded
def train_detector(config, seed, input_, output, model):
    """Train the deviation classifier on the training agents."""
    run = Run(config, seed, input_, output)
    split = pipeline.split_windows(run.windows(), run.trajectories(), run.cfg.detector.test_fraction)
    det, training, losses = pipeline.train_detector(split.train, run.cfg)
    path = _write_model(run, model, detector=det.to_dict())
    io.write_table(run.out("detector_loss.csv"), ("epoch", "loss"), enumerate(losses, 1))
    plots.plot_losses(run.out("detector_loss.png"), losses, "detector training loss")
    click.echo(f"trained on {len(training)} windows, final loss {losses[-1]:.4f} -> {path}")


@main.command()
@common
@with_model(False)
@guarded
def detect(config, seed, input_, output, model):
    """Flag DZ intervals in every trajectory of the input."""
    run = Run(config, seed, input_, output)
    det = _detector(model, run)
    detections = pipeline.run_detector(run.windows(events=[]), det)  # labels play no part in detection
    _write_detections(run.out("detections.csv"), detections, run.dt())
    click.echo(f"{len(detections)} detections")


@main.command("train-forecaster")
@common
@with_model(False)
@guarded
def train_forecaster(config, seed, input_, output, model):
    """Train the scene-graph forecaster on the earlier frames."""
    run = Run(config, seed, input_, output)
    scenes = pipeline.forecaster_scenes(run.trajectories(), run.events(), run.cfg)
    train, _ = pipeline.split_scenes(scenes, run.cfg.detector.test_fraction)
    params, losses = pipeline.fit_forecaster(train, run.cfg)
    fc = run.cfg.forecaster
    path = _write_model(run, model, forecaster={"weights": params.to_dict(), "hidden": fc.hidden, "rounds": fc.rounds,
                                                "alpha": fc.alpha, "gamma": fc.gamma})
    io.write_table(run.out("forecaster_loss.csv"), ("epoch", "loss"), enumerate(losses, 1))
    plots.plot_losses(run.out("forecaster_loss.png"), losses, "forecaster training loss")
    click.echo(f"trained on {len(train)} scenes, final loss {losses[-1]:.4f} -> {path}")


@main.command()
@common
@with_model(False)
@guarded
def forecast(config, seed, input_, output, model):
    """Per-vehicle P_Dilemma / P_Causal / P_Pass and maneuver advice for every frame."""
    run = Run(config, seed, input_, output)
    params = _forecaster(model, run)
    rows = pipeline.forecast_rows(run.trajectories(), params, run.cfg)
    io.write_table(run.out("forecasts.csv"), ("frame", "time", "agent_id", "p_dilemma", "p_causal", "p_pass",
                                              "advice", "magnitude"), rows)
    click.echo(f"{len(rows)} forecasts")


def _evaluation(run: Run, model: str | None) -> tuple[pipeline.DetectorEvaluation, list[DzEvent]]:
    det = _detector(model, run)
    events = run.events()
    split = pipeline.split_windows(run.windows(events), run.trajectories(), det.test_fraction)
    test_events = [e for e in events if e.agent_id in split.test_ids]
    return pipeline.evaluate_detector(det, split.test, test_events), test_events


@main.command()
@common
@with_model(False)
@guarded
def evaluate(config, seed, input_, output, model):
    """Detector metrics on the test agents (and forecaster AUCs when trained)."""
    run = Run(config, seed, input_, output)
    ev, _ = _evaluation(run, model)
    rows = ev.rows()
    if "forecaster" in _model_sections(model or run.need_input() / MODEL):
        params = _forecaster(model, run)
        scenes = pipeline.forecaster_scenes(run.trajectories(), run.events(), run.cfg)
        _, test = pipeline.split_scenes(scenes, run.cfg.detector.test_fraction)
        rows += [(f"{head}_auc", auc) for head, auc in pipeline.forecaster_aucs(test, params).items()]
    io.write_table(run.out("report.csv"), ("metric", "value"), rows)
    _export_roc(run, ev)
    _write_detections(run.out("test_detections.csv"), list(ev.detections), run.dt())
    for name, value in rows:
        click.echo(f"{name:>16} {value:.4f}" if isinstance(value, float) else f"{name:>16} {value}")


def _export_roc(run: Run, ev: pipeline.DetectorEvaluation) -> None:
    io.write_roc(run.out("roc.csv"), ev.roc.thresholds, ev.roc.fpr, ev.roc.tpr)
    b = ev.baseline_roc
    io.write_roc(run.out("roc_baseline.csv"), b.thresholds, b.fpr, b.tpr)
    plots.plot_roc(run.out("roc.png"), {"classifier": ev.roc, "deviation baseline": b})


@main.command("export-roc")
@common
@with_model(False)
@guarded
def export_roc(config, seed, input_, output, model):
    """ROC points of the classifier and the raw-deviation baseline."""
    run = Run(config, seed, input_, output)
    ev, _ = _evaluation(run, model)
    _export_roc(run, ev)
    click.echo(f"AUC {ev.roc.auc:.4f} (baseline {ev.baseline_roc.auc:.4f})")


@main.command("maneuver-study")
@common
@with_model(False)
@guarded
def maneuver_study(config, seed, input_, output, model):
    """Collision-free share per P_Pass bucket and ego acceleration."""
    run = Run(config, seed, input_, output)
    params = _forecaster(model, run)
    table = pipeline.maneuver_study(run.trajectories(), run.events(), params, run.cfg)
    io.write_table(run.out("maneuver.csv"), ("bucket", "action", "collision_free_pct", "cases"), table.rows())
    plots.plot_maneuver(run.out("maneuver.png"), table)
    for row in table.rows():
        click.echo(f"{row[0]:>5} {row[1]:+.0f} m/s^2 {row[2]:6.1f}% of {row[3]}")


@main.command("export-deviations")
@common
@click.option("--agents", type=int, default=4, show_default=True, help="Agents with events to plot.")
@guarded
def export_deviations(config, seed, input_, output, agents):
    """Per-frame path deviation of every window, plus a plot for a few agents with events."""
    run = Run(config, seed, input_, output)
    events = run.events()
    windows = run.windows(events)
    dt = run.dt()
    rows = [(w.agent_id, w.anchor_frame, w.anchor_frame * dt, w.deviation.total, w.deviation.ratio,
             w.deviation.peak_ratio, w.label) for w in windows]
    io.write_table(run.out("deviations.csv"), ("agent_id", "frame", "time", "delta_path", "ratio", "peak_ratio",
                                               "label"), rows)
    chosen = sorted({e.agent_id for e in events})[:agents]
    series = {a: [(r[2], r[5]) for r in rows if r[0] == a] for a in chosen}
    spans = {a: [(e.t_start, e.t_end + dt) for e in events if e.agent_id == a] for a in chosen}
    plots.plot_deviation_series(run.out("deviations.png"), series, spans, run.cfg.detector.mining_threshold)
    click.echo(f"{len(rows)} windows")


if __name__ == "__main__":
    main()
