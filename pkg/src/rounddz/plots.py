"""Figures written next to the CSV exports (PNG, no timestamps, byte-stable)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .maneuver import ACTIONS, BUCKETS, ManeuverTable  # noqa: E402
from .metrics import RocCurve  # noqa: E402


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_roc(path: str | Path, curves: Mapping[str, RocCurve]) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, roc in curves.items():
        ax.plot(roc.fpr, roc.tpr, label=f"{name} (AUC {roc.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="0.7", linestyle=":", linewidth=1)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right", fontsize=8)
    _save(fig, path)


def plot_deviation_series(path: str | Path, series: Mapping[int, Sequence[tuple[float, float]]],
                          events: Mapping[int, Sequence[tuple[float, float]]], threshold: float) -> None:
    """Deviation ratio over time for a few agents, with their truth events shaded."""
    agents = sorted(series)
    fig, axes = plt.subplots(len(agents) or 1, 1, figsize=(6, 1.6 * max(len(agents), 1)), squeeze=False)
    for ax, aid in zip(axes[:, 0], agents):
        t = [p[0] for p in series[aid]]
        r = [min(p[1], 5.0) for p in series[aid]]
        ax.plot(t, r, linewidth=1)
        ax.axhline(threshold, color="tab:red", linestyle="--", linewidth=0.8)
        for t0, t1 in events.get(aid, ()):
            ax.axvspan(t0, t1, color="tab:orange", alpha=0.3)
        ax.set_ylabel(f"agent {aid}", fontsize=8)
    axes[-1, 0].set_xlabel("time (s)")
    _save(fig, path)


def plot_maneuver(path: str | Path, table: ManeuverTable) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    width = 0.8 / len(ACTIONS)
    for k, a in enumerate(ACTIONS):
        vals = [table.cells.get((b, a), 0.0) for b in BUCKETS]
        xs = [i + (k - (len(ACTIONS) - 1) / 2) * width for i in range(len(BUCKETS))]
        ax.bar(xs, vals, width, label=f"{a:+g} m/s²")
    ax.set_xticks(range(len(BUCKETS)))
    ax.set_xticklabels(["P_Pass > 0.5", "P_Pass <= 0.5"])
    ax.set_ylabel("collision-free cases (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8, ncol=2)
    _save(fig, path)


def plot_losses(path: str | Path, losses: Sequence[float], title: str) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.plot(range(1, len(losses) + 1), losses)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title, fontsize=9)
    _save(fig, path)
