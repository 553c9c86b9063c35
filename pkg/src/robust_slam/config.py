"""Run configuration with layered defaults: built-in -> profile -> file -> flags."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from .loop_backend import BackendParams
from .robust_ba import SolverParams
from .robust_ba.params import MODES

OUT_ENV = "ROBUST_SLAM_OUT"
FRONTENDS = ("vio", "drift")

# Parameter profiles: the simulated-benchmark setting and the hand-held setting.
PROFILES = {
    "viode_like": {"solver": {"lambda_w": 1.0, "lambda_m": 0.2}},
    "handheld_like": {"solver": {"lambda_w": 1.0, "lambda_m": 1.0}, "backend": {"lambda_l": 1.0}},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything a ``run`` needs besides the dataset itself.

    ``frontend`` selects where the odometry comes from: ``vio`` runs the
    sliding-window estimator; ``drift`` chains noisy ground-truth increments
    (a fast stand-in used to exercise the loop backend on long sequences).
    """

    profile: str | None = None
    mode: str = "robust_weights"
    solver: SolverParams = SolverParams()
    backend: BackendParams = BackendParams()
    loops: bool = True
    frontend: str = "vio"
    drift_sigma: tuple = (0.005, 0.001)
    align: str = "se3"
    seed: int | None = None
    out: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"field 'mode': must be one of {MODES}, got {self.mode!r}")
        if self.frontend not in FRONTENDS:
            raise ConfigError(f"field 'frontend': must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.align not in ("se3", "sim3"):
            raise ConfigError(f"field 'align': must be 'se3' or 'sim3', got {self.align!r}")
        if self.workers < 1:
            raise ConfigError("field 'workers': must be >= 1")
        if self.profile is not None and self.profile not in PROFILES:
            raise ConfigError(f"field 'profile': unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.solver.mode != self.mode:
            object.__setattr__(self, "solver", replace(self.solver, mode=self.mode))

    def to_dict(self):
        d = asdict(self)
        d["drift_sigma"] = list(self.drift_sigma)
        return d


def _deep_update(base: dict, over: dict):
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = copy.deepcopy(v)
    return base


def _build(d: dict, source: str) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    for key in d:
        if key not in known:
            raise ConfigError(f"{source}: field '{key}': unknown field")
    kw = dict(d)
    for key, cls in (("solver", SolverParams), ("backend", BackendParams)):
        sub = kw.get(key, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{source}: field '{key}': expected an object")
        names = {f.name for f in fields(cls)}
        for name in sub:
            if name not in names:
                raise ConfigError(f"{source}: field '{key}.{name}': unknown field")
        sub = {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
        if key == "solver":
            sub.setdefault("mode", kw.get("mode", "robust_weights"))
        try:
            kw[key] = cls(**sub)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: field '{key}': {exc}") from None
    if "drift_sigma" in kw:
        kw["drift_sigma"] = tuple(kw["drift_sigma"])
    try:
        return RunConfig(**kw)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def resolve_config(file_dict: dict | None = None, flags: dict | None = None, source="<config>") -> RunConfig:
    """Layer profile, file and flag values over the built-in defaults.

    The profile named by the flags (or else by the file) is applied first, then
    the remaining file values, then the flags. Flags whose value is None are
    ignored.
    """
    file_dict = copy.deepcopy(file_dict or {})
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    profile = flags.get("profile", file_dict.get("profile"))
    d: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"{source}: field 'profile': unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        _deep_update(d, PROFILES[profile])
    _deep_update(d, file_dict)
    _deep_update(d, flags)
    d["profile"] = profile
    return _build(d, source)


def load_run_config(path=None, **flags) -> RunConfig:
    file_dict = read_config_file(path) if path else {}
    file_dict.pop("scenario", None)   # scenario sections belong to generate/sweep
    file_dict.pop("sweep", None)
    return resolve_config(file_dict, flags, str(path) if path else "<flags>")


def default_out(name):
    """``$ROBUST_SLAM_OUT/name`` (``./runs/name`` when the variable is unset)."""
    return os.path.join(os.environ.get(OUT_ENV) or "runs", name)
