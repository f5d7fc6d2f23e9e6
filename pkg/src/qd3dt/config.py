"""TOML configuration loading with strict key and type checking.

A single file may hold ``[scenario]``, ``[tracker]`` (with
``[tracker.affinity]``), ``[motion]``, ``[eval]``, ``[train]`` and sweep
tables; each command reads the sections it needs.
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .metrics import EvalConfig
from .motion import OptimizerConfig
from .motion.models import MOTION_MODELS
from .similarity import AffinityConfig
from .simworld import (
    EgoProfile,
    InvalidScript,
    MotionProfile,
    NoiseConfig,
    ObjectSpec,
    ScenarioConfig,
    crossing_scenario,
)
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        where = f"{path}:{line}:{col}" if line is not None else str(path)
        raise ConfigError(f"{where}: {exc}") from exc


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _check_type(value, default, where):
    if default is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, list)
        value = type(default)(value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def build(cls, table: dict, where: str, skip=(), **extra):
    """Instantiate dataclass ``cls`` from ``table``, rejecting unknown keys and wrong types."""
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = dict(extra)
    for key, value in table.items():
        if key in skip:
            continue
        if key not in known or key in extra:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kwargs[key] = _check_type(value, _default_of(known[key]), f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError, InvalidScript) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# -- scenario -----------------------------------------------------------------

_SCENARIO_NESTED = ("kind", "ego", "noise", "motion_profiles", "occlusions", "objects", "n_pairs", "speed")


def scenario_from_table(table: dict, where: str = "scenario", seed: int | None = None) -> ScenarioConfig:
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    table = dict(table)
    if seed is not None:
        table["seed"] = seed
    noise = build(NoiseConfig, table.get("noise", {}), f"{where}.noise")
    kind = table.get("kind", "lanes")
    if kind == "crossing":
        allowed = {"kind", "seed", "n_frames", "n_pairs", "speed", "frame_rate", "noise"}
        extra = sorted(set(table) - allowed)
        if extra:
            raise ConfigError(f"{where}: unknown key {extra[0]!r} for crossing scenarios")
        try:
            cfg = crossing_scenario(
                seed=_check_type(table.get("seed", 0), 0, f"{where}.seed"),
                n_frames=_check_type(table.get("n_frames", 48), 0, f"{where}.n_frames"),
                n_pairs=_check_type(table.get("n_pairs", 2), 0, f"{where}.n_pairs"),
                speed=_check_type(table.get("speed", 6.0), 0.0, f"{where}.speed"),
                noise=noise,
                frame_rate=_check_type(table.get("frame_rate", 12.0), 0.0, f"{where}.frame_rate"),
            )
            cfg.validate()
        except (ValueError, InvalidScript) as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        return cfg
    if kind != "lanes":
        raise ConfigError(f"{where}.kind: expected 'lanes' or 'crossing', got {kind!r}")

    ego = build(EgoProfile, table.get("ego", {}), f"{where}.ego")
    profiles = [build(MotionProfile, p, f"{where}.motion_profiles[{i}]")
                for i, p in enumerate(table.get("motion_profiles", [{}]))]
    occlusions = []
    for i, occ in enumerate(table.get("occlusions", [])):
        w = f"{where}.occlusions[{i}]"
        if not isinstance(occ, dict) or set(occ) != {"object", "start", "end"}:
            raise ConfigError(f"{w}: expected keys object, start, end")
        occlusions.append(tuple(_check_type(occ[k], 0, f"{w}.{k}") for k in ("object", "start", "end")))
    objects = None
    if "objects" in table:
        objects = []
        for i, obj in enumerate(table["objects"]):
            w = f"{where}.objects[{i}]"
            profile = build(MotionProfile, obj.get("profile", {}), f"{w}.profile") if isinstance(obj, dict) else None
            spec = build(ObjectSpec, obj, w, skip=("profile",), profile=profile)
            spec.position = tuple(float(x) for x in spec.position)
            if spec.dimensions is not None:
                spec.dimensions = tuple(float(x) for x in spec.dimensions)
            objects.append(spec)
    cfg = build(ScenarioConfig, table, where, skip=_SCENARIO_NESTED, ego_profile=ego, noise=noise,
                motion_profiles=profiles, occlusion_script=occlusions, objects=objects)
    try:
        cfg.validate()
    except InvalidScript as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return cfg


def scenario_to_table(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


# -- tracker / motion / eval --------------------------------------------------


def tracker_from_table(table: dict, where: str = "tracker") -> TrackerConfig:
    table = dict(table or {})
    affinity = build(AffinityConfig, table.get("affinity", {}), f"{where}.affinity")
    return build(TrackerConfig, table, where, skip=("affinity",), affinity=affinity)


@dataclass
class MotionSettings:
    name: str = "kf3d"
    model: str = ""  # parameter file, velolstm only
    momentum: float = 0.5
    use_confidence: bool = True

    def __post_init__(self):
        if self.name not in MOTION_MODELS:
            raise ValueError(f"unknown motion model {self.name!r}; choose from {', '.join(MOTION_MODELS)}")


def motion_from_table(table: dict, where: str = "motion") -> MotionSettings:
    return build(MotionSettings, table or {}, where)


def eval_from_table(table: dict, where: str = "eval") -> EvalConfig:
    return build(EvalConfig, table or {}, where)


@dataclass
class TrainSettings:
    seeds: list = dataclasses.field(default_factory=lambda: list(range(8)))
    window: int = 10
    hidden: int = 128
    epochs: int = 30
    learning_rate: float = 0.01
    momentum: float = 0.9
    clip_norm: float = 5.0
    batch_size: int = 32
    seed: int = 0


def train_from_table(table: dict, where: str = "train") -> tuple[TrainSettings, OptimizerConfig]:
    settings = build(TrainSettings, table or {}, where, skip=("scenario",))
    opt = OptimizerConfig(learning_rate=settings.learning_rate, momentum=settings.momentum,
                          clip_norm=settings.clip_norm, epochs=settings.epochs, batch_size=settings.batch_size,
                          seed=settings.seed)
    return settings, opt
