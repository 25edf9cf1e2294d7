"""CSV trajectories and events, tabular exports and the JSON model file.

Floats are written with ``repr`` so a load followed by a write reproduces the
file byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .deviation import DeviationSeries, WindowSample
from .errors import SchemaError
from .geometry import DT_TOLERANCE, AgentState, Trajectory, Vec2, frame_index
from .signal import DzEvent

TRAJECTORY_HEADER = ("frame", "time", "agent_id", "x", "y", "vx", "vy", "ax", "ay", "heading", "length", "width")
EVENT_HEADER = ("agent_id", "t_start", "t_end", "cause_id")
ROC_HEADER = ("threshold", "fpr", "tpr")

MODEL_FORMAT = "rounddz-model"
MODEL_VERSION = 1


def _cell(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_table(path: str | Path, required: Sequence[str]) -> tuple[list[str], list[tuple[int, dict[str, str]]]]:
    """Header and (line number, row) pairs; a missing required column is a schema error."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = [(reader.line_num, row) for row in reader]
    return header, rows


# -- trajectories ------------------------------------------------------------

def trajectory_rows(trajectories: Iterable[Trajectory]) -> list[tuple]:
    rows = []
    for tr in trajectories:
        for t, s in tr.states:
            rows.append((frame_index(t, tr.dt), t, tr.agent_id, s.position.x, s.position.y, s.velocity.x,
                         s.velocity.y, s.acceleration.x, s.acceleration.y, s.heading, s.length, s.width))
    rows.sort(key=lambda r: (r[0], r[2]))
    return rows


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    write_table(path, TRAJECTORY_HEADER, trajectory_rows(trajectories))


def _parse(row: dict[str, str], col: str, kind: type, path, line: int):
    raw = row.get(col)
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}:{line}: bad value {raw!r} in column {col}") from None


def load_trajectories(path: str | Path, columns: Mapping[str, str] | None = None) -> list[Trajectory]:
    """Trajectories grouped by agent and sorted by time, with a uniform inferred dt.

    ``columns`` maps canonical column names to the names used in the file.
    """
    names = {c: (columns or {}).get(c, c) for c in TRAJECTORY_HEADER}
    _, rows = read_table(path, list(names.values()))
    per_agent: dict[int, list[tuple[int, int, float, AgentState]]] = {}
    for line, row in rows:
        def get(c, kind=float):
            return _parse(row, names[c], kind, path, line)
        try:
            state = AgentState(Vec2(get("x"), get("y")), Vec2(get("vx"), get("vy")), Vec2(get("ax"), get("ay")),
                               get("heading"), get("length"), get("width"))
        except ValueError as exc:
            raise SchemaError(f"{path}:{line}: {exc}") from None
        per_agent.setdefault(get("agent_id", int), []).append((line, get("frame", int), get("time"), state))
    dt = None
    for aid in sorted(per_agent):
        recs = sorted(per_agent[aid], key=lambda r: r[2])
        for (_, f0, t0, _), (line, f1, t1, _) in zip(recs, recs[1:]):
            if f1 != f0 + 1:
                raise SchemaError(f"{path}:{line}: agent {aid} frames not contiguous ({f0} then {f1})")
            gap = t1 - t0
            if dt is None:
                dt = gap
            elif abs(gap - dt) > DT_TOLERANCE:
                raise SchemaError(f"{path}:{line}: agent {aid} time step {gap!r} differs from dt {dt!r}")
        per_agent[aid] = recs
    if dt is None:
        dt = _dt_from_frames(per_agent)
    out = []
    for aid in sorted(per_agent):
        out.append(Trajectory(aid, dt, tuple((t, s) for _, _, t, s in per_agent[aid])))
    return out


def _dt_from_frames(per_agent) -> float:
    # every agent has a single row: fall back to time / frame
    for recs in per_agent.values():
        for _, f, t, _ in recs:
            if f > 0:
                return t / f
    return 1.0


# -- events ------------------------------------------------------------------

def write_events(path: str | Path, events: Iterable[DzEvent]) -> None:
    rows = sorted((e.agent_id, e.t_start, e.t_end, e.cause_id) for e in events)
    write_table(path, EVENT_HEADER, rows)


def load_events(path: str | Path, dt: float) -> list[DzEvent]:
    _, rows = read_table(path, EVENT_HEADER)
    out = []
    for line, row in rows:
        aid = _parse(row, "agent_id", int, path, line)
        t0 = _parse(row, "t_start", float, path, line)
        t1 = _parse(row, "t_end", float, path, line)
        if t1 < t0:
            raise SchemaError(f"{path}:{line}: t_end before t_start")
        out.append(DzEvent(aid, t0, t1, _parse(row, "cause_id", int, path, line),
                           frame_index(t0, dt), frame_index(t1, dt)))
    return out


def write_roc(path: str | Path, thresholds: Sequence[float], fpr: Sequence[float], tpr: Sequence[float]) -> None:
    write_table(path, ROC_HEADER, zip(thresholds, fpr, tpr))


# -- deviation windows -------------------------------------------------------

def window_header(horizon: int) -> list[str]:
    return (["agent_id", "anchor_frame", "label"] + [f"d{k + 1}" for k in range(horizon)]
            + ["total", "ratio"] + [f"r{k + 1}" for k in range(horizon)])


def write_windows(path: str | Path, windows: Sequence[WindowSample], horizon: int) -> None:
    rows = []
    for w in windows:
        d = w.deviation
        if len(d.per_step) != horizon:
            raise SchemaError(f"window of agent {w.agent_id} has {len(d.per_step)} steps, expected {horizon}")
        rows.append([w.agent_id, w.anchor_frame, w.label, *d.per_step, d.total, d.ratio, *d.step_ratios])
    write_table(path, window_header(horizon), rows)


def load_windows(path: str | Path) -> list[WindowSample]:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    horizon = sum(1 for c in header if c.startswith("d") and c[1:].isdigit())
    _, rows = read_table(path, window_header(horizon))
    out = []
    for line, row in rows:
        def num(c):
            return _parse(row, c, float, path, line)
        per = tuple(num(f"d{k + 1}") for k in range(horizon))
        ratios = tuple(num(f"r{k + 1}") for k in range(horizon))
        dev = DeviationSeries(per, num("total"), num("ratio"), ratios)
        out.append(WindowSample(_parse(row, "agent_id", int, path, line), _parse(row, "anchor_frame", int, path, line),
                                dev, _parse(row, "label", int, path, line) == 1))
    return out


# -- model file --------------------------------------------------------------

def save_model(path: str | Path, sections: Mapping[str, Any]) -> None:
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION}
    doc.update(sections)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_model(path: str | Path) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not a model file ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise SchemaError(f"{path}: unsupported model version {doc.get('version')!r}")
    return doc
