"""Scenario configuration: presets, dynamic levels and JSON overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

import numpy as np

from .camera import CameraModel
from .imu import GRAVITY, ImuNoise
from .trajectory import InvalidScenarioError

LEVELS = {"none": 0.0, "low": 0.1, "mid": 0.3, "high": 0.5}


class ScenarioConfigError(InvalidScenarioError):
    pass


@dataclass(frozen=True)
class Population:
    layout: str = "wall_line"
    n_static: int = 80
    n_dynamic: int = 0
    n_temp_static: int = 0
    dynamic_motion: str = "follow"
    points_per_object: int = 10
    object_size: float = 0.8
    wander: float = 0.4
    relocation_shift: float = 2.0
    cluster_distance: float = 3.0
    relocation_time: float | None = None


@dataclass(frozen=True)
class LoopParams:
    min_shared: int = 10
    min_separation: int = 10
    max_matches: int = 3
    point_sigma: float = 0.02
    sigma_t: float = 0.05
    sigma_r: float = 0.01
    inlier_tol: float = 0.1


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    trajectory: str = "follow_line"
    trajectory_params: dict = field(default_factory=dict)
    population: Population = Population()
    camera: CameraModel = CameraModel()
    imu: ImuNoise = ImuNoise()
    loops: LoopParams = LoopParams()
    keyframe_rate: float = 10.0
    seed: int = 0
    level: str | None = None
    noise_free: bool = False
    gravity: tuple = tuple(GRAVITY)
    bias_scale: tuple = (0.02, 0.002)

    def to_dict(self):
        d = asdict(self)
        d["gravity"] = list(self.gravity)
        d["bias_scale"] = list(self.bias_scale)
        return d


def _presets():
    return {
        "static": Scenario(
            name="static", trajectory="loop",
            trajectory_params={"duration": 10.0, "radius": 2.0},
            population=Population(layout="cylinder", n_static=120)),
        "dynamic_follow": Scenario(
            name="dynamic_follow", trajectory="follow_line",
            trajectory_params={"duration": 3.5, "length": 2.2},
            population=Population(layout="wall_line", n_static=40, n_dynamic=40, wander=1.0),
            level="high"),
        "temporal_static": Scenario(
            name="temporal_static", trajectory="loop",
            trajectory_params={"duration": 20.0, "radius": 2.0},
            population=Population(layout="cylinder", n_static=120, n_temp_static=30,
                                  cluster_distance=4.0)),
        "e_shape": Scenario(
            name="e_shape", trajectory="e_shape",
            trajectory_params={},
            population=Population(layout="e_room", n_static=160, n_temp_static=30),
            keyframe_rate=5.0),
    }


PRESET_NAMES = tuple(_presets())


def preset(name, **overrides) -> Scenario:
    try:
        sc = _presets()[name]
    except KeyError:
        raise ScenarioConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}") from None
    return replace(sc, **overrides) if overrides else sc


def with_level(scenario: Scenario, level: str) -> Scenario:
    """Rebalance static/dynamic counts so that ``level`` of the movable population is dynamic."""
    if level not in LEVELS:
        raise ScenarioConfigError(f"level must be one of {list(LEVELS)}, got {level!r}")
    pop = scenario.population
    total = pop.n_static + pop.n_dynamic
    n_dyn = int(round(LEVELS[level] * total))
    return replace(scenario, level=level,
                   population=replace(pop, n_static=total - n_dyn, n_dynamic=n_dyn))


def _merge(base, overrides, path, source):
    """Return a copy of dataclass ``base`` with ``overrides`` applied, checking field names."""
    names = {f.name: f for f in fields(base)}
    kwargs = {}
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ScenarioConfigError(f"{source}: field '{where}': unknown field")
        current = getattr(base, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ScenarioConfigError(f"{source}: field '{where}': expected an object")
            kwargs[key] = _merge(current, value, where, source)
        elif isinstance(current, dict):
            merged = copy.deepcopy(current)
            merged.update(value)
            kwargs[key] = merged
        elif isinstance(current, tuple):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ScenarioConfigError(f"{source}: field '{path or '<root>'}': {exc}") from None


def validate(sc: Scenario, source="<scenario>"):
    pop = sc.population
    for name in ("n_static", "n_dynamic", "n_temp_static"):
        v = getattr(pop, name)
        if not isinstance(v, (int, np.integer)) or v < 0:
            raise ScenarioConfigError(f"{source}: field 'population.{name}': must be an integer >= 0, got {v!r}")
    if not sc.keyframe_rate > 0:
        raise ScenarioConfigError(f"{source}: field 'keyframe_rate': must be > 0")
    if sc.level is not None and sc.level not in LEVELS:
        raise ScenarioConfigError(f"{source}: field 'level': must be one of {list(LEVELS)}")
    if sc.loops.min_shared < 3:
        raise ScenarioConfigError(f"{source}: field 'loops.min_shared': must be >= 3")
    if len(sc.gravity) != 3:
        raise ScenarioConfigError(f"{source}: field 'gravity': expected 3 values")
    return sc


def scenario_from_dict(d, source="<dict>") -> Scenario:
    """Layer a config dict over its preset (``"preset"`` key) or the built-in defaults."""
    d = dict(d)
    name = d.pop("preset", None)
    base = preset(name) if name else Scenario()
    level = d.pop("level", None)
    sc = _merge(base, d, "", source)
    if level is not None:
        sc = with_level(sc, level)
    return validate(sc, source)


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ScenarioConfigError(f"{path}: top level must be an object")
    return scenario_from_dict(d, str(path))
