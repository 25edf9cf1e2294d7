"""Run configuration: one YAML file with a section per component.

Every section maps onto a frozen dataclass.  Loading rejects unknown keys and
wrong types, so a typo fails loudly instead of silently falling back to a
default.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .deviation import DEVIATION_THRESHOLD, TrainConfig
from .dilemma import MPH, DzParams, clamp_approach_speed
from .errors import SchemaError
from .predictor import PredictorConfig
from .signal import SignalParams
from .sim import SPEED_RANGE, ProfileDistribution, SimConfig


@dataclass(frozen=True)
class MapConfig:
    n_legs: int = 3
    inner_radius: float = 10.0
    outer_radius: float = 16.0
    lane_width: float = 4.0
    entry_radius: float = 17.5
    entry_sweep: float = 1.0
    merge_angle: float = 0.25
    approach_length: float = 100.0


@dataclass(frozen=True)
class SignalConfig:
    t_max: float = 1.5
    d_t: float = 10.0
    include_red: bool = True
    entry_time_steps: int = 4  # T; carried for completeness, no signal rule reads it


@dataclass(frozen=True)
class SimSection:
    duration: float = 1800.0
    dt: float = 0.5
    substeps: int = 5
    arrival_rate: float = 0.08
    circulating_rate: float = 0.1
    circulating_speed: float = 7.0
    dz_brake_probability: float = 1.0
    reaction_time: tuple[float, float] = (0.8, 1.2)
    hard_brake_decel: tuple[float, float] = (6.0, 8.0)


@dataclass(frozen=True)
class DetectorSection:
    # far more epochs than the reference 100: the synthetic training sets hold a few hundred windows
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=2000, batch_size=128, learning_rate=0.05))
    mining_threshold: float = DEVIATION_THRESHOLD
    test_fraction: float = 0.5


@dataclass(frozen=True)
class ForecasterSection:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20, batch_size=64, learning_rate=0.05))
    hidden: int = 16
    rounds: int = 2
    stride: int = 1
    alpha: float = 0.5  # inert
    gamma: float = 0.2  # inert


@dataclass(frozen=True)
class ManeuverSection:
    n_per_kind: int = 100
    horizon: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    speed_limit_mph: float = 25.0
    map: MapConfig = field(default_factory=MapConfig)
    dz: DzParams = field(default_factory=DzParams)
    signal: SignalConfig = field(default_factory=SignalConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    sim: SimSection = field(default_factory=SimSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    forecaster: ForecasterSection = field(default_factory=ForecasterSection)
    maneuver: ManeuverSection = field(default_factory=ManeuverSection)
    columns: dict[str, str] = field(default_factory=dict)  # canonical CSV column -> name in the input file

    def __post_init__(self):
        if abs(self.sim.dt - self.predictor.dt) > 1e-12:
            raise SchemaError(f"sim.dt {self.sim.dt} and predictor.dt {self.predictor.dt} differ")
        if not 0.0 < self.detector.test_fraction < 1.0:
            raise SchemaError("detector.test_fraction must lie strictly between 0 and 1")

    @property
    def signal_params(self) -> SignalParams:
        return SignalParams(self.signal.t_max, self.signal.d_t, self.dz, self.signal.include_red)

    @property
    def approach_speed(self) -> float:
        """Speed limit in m/s, clamped to the 15-25 mph band."""
        return clamp_approach_speed(self.speed_limit_mph * MPH)

    def sim_config(self, seed: int | None = None) -> SimConfig:
        s = self.sim
        profiles = ProfileDistribution(SPEED_RANGE, s.reaction_time, s.hard_brake_decel, s.dz_brake_probability)
        return SimConfig(dt=s.dt, duration=s.duration, arrival_rate=s.arrival_rate,
                         circulating_rate=s.circulating_rate, circulating_speed=s.circulating_speed,
                         profiles=profiles, signal=self.signal_params,
                         seed=self.seed if seed is None else seed, substeps=s.substeps)

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else dataclasses.replace(self, seed=seed)


# -- (de)serialization -------------------------------------------------------

def _convert(tp: Any, value: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise SchemaError(f"{where}: expected a mapping")
        return _build(tp, value, where)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _convert(args[0], value, where)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(value, (list, tuple)) or len(value) != len(args):
            raise SchemaError(f"{where}: expected a list of {len(args)} values")
        return tuple(_convert(a, v, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if origin is dict:
        kt, vt = typing.get_args(tp)
        if not isinstance(value, dict):
            raise SchemaError(f"{where}: expected a mapping")
        return {_convert(kt, k, where): _convert(vt, v, f"{where}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise SchemaError(f"{where}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise SchemaError(f"{where}: expected a string")
        return value
    raise SchemaError(f"{where}: unsupported type {tp}")


def _build(cls: type, data: dict, where: str) -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise SchemaError(f"{where or 'config'}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise SchemaError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def _plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def config_to_dict(config: RunConfig) -> dict:
    return _plain(config)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: invalid YAML ({exc})") from exc
    if data is not None and not isinstance(data, dict):
        raise SchemaError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)
