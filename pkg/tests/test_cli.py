import csv
import json

import pytest
from click.testing import CliRunner

from rounddz import io
from rounddz.cli import main
from rounddz.deviation import DeviationSeries, WindowSample

SMALL = """\
seed: 2
sim:
  duration: 600.0
  dz_brake_probability: 1.0
detector:
  train:
    epochs: 150
"""


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def report(path):
    with open(path) as f:
        return {row["metric"]: row["value"] for row in csv.DictReader(f)}


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.yaml"
    cfg.write_text(SMALL)
    run = root / "run"
    outputs = []
    for cmd in (["simulate", "--output", run], ["mine", "--input", run], ["train-detector", "--input", run],
                ["evaluate", "--input", run]):
        result = invoke(*cmd, "--config", cfg)
        assert result.exit_code == 0, result.output
        outputs.append(result.output)
    return cfg, run, outputs


def test_simulate_mine_evaluate_writes_report(pipeline_run):
    _, run, _ = pipeline_run
    for name in ("trajectories.csv", "events.csv", "windows.csv", "model.json", "report.csv", "roc.csv",
                 "roc_baseline.csv", "roc.png", "test_detections.csv", "detector_loss.png"):
        assert (run / name).exists(), name
    rep = report(run / "report.csv")
    for metric in ("recall", "fpr", "f1", "auc", "baseline_auc", "iou"):
        assert 0.0 <= float(rep[metric]) <= 1.0


def test_rerun_gives_identical_artifacts(pipeline_run, tmp_path):
    cfg, run, _ = pipeline_run
    again = tmp_path / "run"
    for cmd in (["simulate", "--output", again], ["mine", "--input", again], ["train-detector", "--input", again],
                ["evaluate", "--input", again]):
        assert invoke(*cmd, "--config", cfg).exit_code == 0
    for name in ("trajectories.csv", "events.csv", "windows.csv", "training_set.csv", "model.json", "report.csv",
                 "roc.csv", "test_detections.csv"):
        assert (run / name).read_bytes() == (again / name).read_bytes(), name


def test_seed_flag_overrides_config(pipeline_run, tmp_path):
    cfg, run, _ = pipeline_run
    assert invoke("simulate", "--config", cfg, "--seed", 3, "--output", tmp_path).exit_code == 0
    assert (tmp_path / "trajectories.csv").read_bytes() != (run / "trajectories.csv").read_bytes()


def test_unknown_subcommand_exits_nonzero():
    result = invoke("frobnicate")
    assert result.exit_code != 0
    assert "No such command" in result.output


def test_simulate_requires_output():
    result = invoke("simulate")
    assert result.exit_code == 1
    assert "error: schema: --output is required" in result.output


def test_schema_error_is_one_line(tmp_path):
    (tmp_path / "trajectories.csv").write_text("frame,time\n0,0\n")
    result = invoke("mine", "--input", tmp_path)
    assert result.exit_code == 1
    lines = result.output.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error: schema: ")
    assert "missing column" in lines[0]


def test_bad_config_is_a_schema_error(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("sim:\n  durration: 5\n")
    result = invoke("simulate", "--config", cfg, "--output", tmp_path)
    assert result.exit_code == 1 and result.output.startswith("error: schema: ")


def test_evaluate_without_model(tmp_path):
    (tmp_path / "trajectories.csv").write_text(",".join(io.TRAJECTORY_HEADER) + "\n")
    result = invoke("evaluate", "--input", tmp_path)
    assert result.exit_code == 1 and "train-detector" in result.output


# -- perfect detector stub ---------------------------------------------------------

def stub_run(root):
    rows = [(f, f * 0.5, agent, float(f), 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 4.5, 1.8)
            for agent in (1, 2, 3, 4) for f in range(10)]
    io.write_table(root / "trajectories.csv", io.TRAJECTORY_HEADER, rows)
    # agents 1 and 3 have a DZ event over frames 2..5
    io.write_table(root / "events.csv", io.EVENT_HEADER, [(1, 1.0, 2.5, 9), (3, 1.0, 2.5, 9)])
    windows = []
    for agent, dz in ((1, True), (2, False), (3, True), (4, False)):
        for anchor in range(2, 6):
            step = 5.0 if dz else 0.3
            windows.append(WindowSample(agent, anchor, DeviationSeries((step,) * 4, 4 * step, 0.9, (0.9,) * 4), dz))
    io.write_windows(root / "windows.csv", windows, 4)
    n_hidden = 32
    detector = {"weights": {"w1": [[1.0] * n_hidden] * 4, "b1": [-8.0] * n_hidden,
                            "w2": [[1.0]] * n_hidden, "b2": [-16.0]},
                "mining_threshold": 0.8, "min_total": 0.0,
                "train": {"epochs": 1, "batch_size": 128, "learning_rate": 0.05, "seed": 0},
                "test_fraction": 0.5}
    io.save_model(root / "model.json", {"detector": detector})


def test_perfect_detector_stub_reports_f1_one(tmp_path):
    stub_run(tmp_path)
    result = invoke("evaluate", "--input", tmp_path)
    assert result.exit_code == 0, result.output
    rep = report(tmp_path / "report.csv")
    assert float(rep["f1"]) == 1.0
    assert float(rep["recall"]) == 1.0 and float(rep["fpr"]) == 0.0
    assert float(rep["auc"]) == 1.0 and float(rep["iou"]) == 1.0
    with open(tmp_path / "test_detections.csv") as f:
        dets = list(csv.DictReader(f))
    assert [(d["agent_id"], d["frame_start"], d["frame_end"]) for d in dets] == [("3", "2", "5")]


def test_detect_and_export_roc_on_stub(tmp_path):
    stub_run(tmp_path)
    assert invoke("detect", "--input", tmp_path).exit_code == 0
    with open(tmp_path / "detections.csv") as f:
        agents = sorted({int(r["agent_id"]) for r in csv.DictReader(f)})
    assert agents == [1, 3]
    result = invoke("export-roc", "--input", tmp_path)
    assert result.exit_code == 0 and "AUC 1.0000" in result.output
    assert (tmp_path / "roc.csv").read_text().startswith("threshold,fpr,tpr\n")


def test_export_deviations_on_stub(tmp_path):
    stub_run(tmp_path)
    assert invoke("export-deviations", "--input", tmp_path).exit_code == 0
    assert (tmp_path / "deviations.png").stat().st_size > 0
    with open(tmp_path / "deviations.csv") as f:
        assert len(list(csv.DictReader(f))) == 16


def test_model_file_names_its_format(tmp_path):
    stub_run(tmp_path)
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["format"] == "rounddz-model" and doc["version"] == 1
