"""Run configuration read from TOML.

Every section is optional and falls back to the library defaults::

    schema_version = 1

    [vehicle]          # VehicleParams fields
    [contact]          # ContactParams fields
    [plan]             # hO_levels_m or hO_fractions, vc_levels_mps, cAV_levels_Nspm, replicate_count
    [solver]           # dt, horizon, workers, crossing_torque, post_apex, approach_gap, chassis_only_energy
    [fit]              # scaling, exclude_flagged
    [strategy]         # cAV_bounds, weights, detection_distance, stroke_limit, grid_points
    [paths]            # output_dir

Unknown sections or keys and values of the wrong type are rejected with the
dotted path of the offending field.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .campaign import DoePlan
from .contact import ContactParams
from .scenario import SimulationSettings
from .vehicle import VehicleParams

__all__ = ["CONFIG_SCHEMA_VERSION", "ConfigError", "FitOptions", "StrategyOptions", "RunConfig",
           "load_config", "parse_config"]

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class FitOptions:
    scaling: str = "standardized"
    exclude_flagged: bool = False

    def __post_init__(self):
        if self.scaling not in ("raw", "standardized"):
            raise ValueError("scaling must be 'raw' or 'standardized'")


@dataclass(frozen=True)
class StrategyOptions:
    cAV_bounds: tuple[float, float] = (400.0, 6400.0)
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    detection_distance: float = 1.0
    stroke_limit: float | None = None  # mechanism stroke; None takes the vehicle's
    grid_points: int = 1000


@dataclass(frozen=True)
class RunConfig:
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    contact: ContactParams = field(default_factory=ContactParams)
    plan: DoePlan | None = None  # None: the default grid for the vehicle's wheel radius
    solver: SimulationSettings = field(default_factory=SimulationSettings)
    workers: int = 1
    fit: FitOptions = field(default_factory=FitOptions)
    strategy: StrategyOptions = field(default_factory=StrategyOptions)
    output_dir: str = "out"
    schema_version: int = CONFIG_SCHEMA_VERSION

    @property
    def doe_plan(self) -> DoePlan:
        return self.plan if self.plan is not None else DoePlan.default(self.vehicle.wheel_radius)

    @property
    def stroke_limit(self) -> float:
        s = self.strategy.stroke_limit
        return self.vehicle.mechanism_stroke if s is None else s


def _coerce(path: str, value, kind):
    """Check ``value`` against the annotated kind of a dataclass field."""
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(kind, tuple):  # fixed-length numeric array
        if not isinstance(value, list) or len(value) != len(kind):
            raise ConfigError(path, f"expected an array of {len(kind)} numbers")
        return tuple(_coerce(f"{path}[{i}]", v, float) for i, v in enumerate(value))
    if kind == "levels":
        if not isinstance(value, list) or not value:
            raise ConfigError(path, "expected a non-empty array of numbers")
        return tuple(_coerce(f"{path}[{i}]", v, float) for i, v in enumerate(value))
    raise AssertionError(kind)


def _kind_of(default):
    if isinstance(default, bool):
        return bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, str):
        return str
    if isinstance(default, tuple):
        return tuple(float for _ in default)
    raise AssertionError(default)


def _section(raw: dict, name: str, cls, kinds: dict | None = None, skip=()):
    """Build ``cls`` from ``raw[name]``, reporting bad keys by dotted path."""
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(name, "expected a table")
    defaults = cls()
    kinds = dict(kinds or {})
    for f in dataclasses.fields(cls):
        if f.name not in kinds and f.name not in skip:
            kinds[f.name] = _kind_of(getattr(defaults, f.name))
    values = {}
    for key, value in table.items():
        if key not in kinds:
            raise ConfigError(f"{name}.{key}", "unknown key")
        values[key] = _coerce(f"{name}.{key}", value, kinds[key])
    try:
        return cls(**values)
    except ValueError as exc:
        raise _field_error(name, kinds, str(exc)) from None


def _field_error(section: str, fields, message: str) -> ConfigError:
    """Point a validation message at its field when it names one."""
    head, _, rest = message.partition(" ")
    head = head.removeprefix(section + ".")
    if head in fields and rest:
        return ConfigError(f"{section}.{head}", rest)
    return ConfigError(section, message)


def _plan(raw: dict, wheel_radius: float) -> DoePlan | None:
    table = raw.get("plan")
    if table is None:
        return None
    if not isinstance(table, dict):
        raise ConfigError("plan", "expected a table")
    known = {"hO_levels_m": "levels", "hO_fractions": "levels", "vc_levels_mps": "levels",
             "cAV_levels_Nspm": "levels", "replicate_count": int}
    vals = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"plan.{key}", "unknown key")
        vals[key] = _coerce(f"plan.{key}", value, known[key])
    if "hO_levels_m" in vals and "hO_fractions" in vals:
        raise ConfigError("plan.hO_fractions", "give either hO_levels_m or hO_fractions, not both")
    default = DoePlan.default(wheel_radius)
    if "hO_fractions" in vals:
        hO = tuple(f * wheel_radius for f in vals["hO_fractions"])
    else:
        hO = vals.get("hO_levels_m", default.hO_levels)
    try:
        return DoePlan(hO, vals.get("vc_levels_mps", default.vc_levels),
                       vals.get("cAV_levels_Nspm", default.cAV_levels),
                       vals.get("replicate_count", 1))
    except ValueError as exc:
        err = _field_error("plan", ("hO_levels", "vc_levels", "cAV_levels", "replicate_count"), str(exc))
        key = {"plan.hO_levels": "plan.hO_fractions" if "hO_fractions" in vals else "plan.hO_levels_m",
               "plan.vc_levels": "plan.vc_levels_mps", "plan.cAV_levels": "plan.cAV_levels_Nspm"}
        if err.path in key:
            err = ConfigError(key[err.path], str(err).partition(": ")[2])
        raise err from None


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded TOML document."""
    sections = {"schema_version", "vehicle", "contact", "plan", "solver", "fit", "strategy", "paths"}
    for key in raw:
        if key not in sections:
            raise ConfigError(key, "unknown section")
    version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
    if isinstance(version, bool) or not isinstance(version, int):
        raise ConfigError("schema_version", "expected an integer")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"unsupported version {version} (this build reads {CONFIG_SCHEMA_VERSION})")

    vehicle = _section(raw, "vehicle", VehicleParams)
    contact = _section(raw, "contact", ContactParams)
    plan = _plan(raw, vehicle.wheel_radius)

    solver_raw = dict(raw.get("solver", {})) if isinstance(raw.get("solver", {}), dict) else None
    if solver_raw is None:
        raise ConfigError("solver", "expected a table")
    workers = _coerce("solver.workers", solver_raw.pop("workers", 1), int)
    if workers < 1:
        raise ConfigError("solver.workers", "must be >= 1")
    solver = _section({"solver": solver_raw}, "solver", SimulationSettings)

    fit = _section(raw, "fit", FitOptions)
    strategy = _section(raw, "strategy", StrategyOptions, kinds={"stroke_limit": float})
    if strategy.stroke_limit is not None and strategy.stroke_limit < 0:
        raise ConfigError("strategy.stroke_limit", "must be >= 0")

    paths = raw.get("paths", {})
    if not isinstance(paths, dict):
        raise ConfigError("paths", "expected a table")
    for key in paths:
        if key != "output_dir":
            raise ConfigError(f"paths.{key}", "unknown key")
    output_dir = _coerce("paths.output_dir", paths.get("output_dir", "out"), str)
    return RunConfig(vehicle, contact, plan, solver, workers, fit, strategy, output_dir, version)


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from None
    return parse_config(raw)
