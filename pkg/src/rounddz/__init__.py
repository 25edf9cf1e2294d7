"""Dilemma-zone mining, detection and forecasting for roundabout traffic."""

from .dilemma import DzParams, classify_zone, in_dilemma_zone, s_pass, s_stop
from .errors import DzError
from .geometry import AgentState, RoundaboutMap, Trajectory, Vec2, build_roundabout
from .signal import DzEvent, SignalParams, SignalState, compute_signal, label_dz_events

__version__ = "0.1.0"

__all__ = [
    "AgentState", "DzError", "DzEvent", "DzParams", "RoundaboutMap", "SignalParams", "SignalState", "Trajectory",
    "Vec2", "build_roundabout", "classify_zone", "compute_signal", "in_dilemma_zone", "label_dz_events", "s_pass",
    "s_stop",
]
