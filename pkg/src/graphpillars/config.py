"""Run configuration: typed sections read from a flat ``key = value`` file.

Example::

    [model]
    variant = graph_pillars
    stage_blocks = 3, 6, 6, 3

    [train]
    epochs = 60

Unknown sections or keys are rejected. ``PG_SEED`` in the environment
overrides ``train.seed``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .scene import CLASSES, DEFAULT_PRIORS, AugmentConfig, GeneratorConfig

VARIANTS = ("bev_rendering", "pointpillars_like", "graph_pillars", "kpconv_pillars")


@dataclass(frozen=True)
class SceneSection:
    extent: float = 48.0
    car_count: tuple[int, int] = DEFAULT_PRIORS["car"].count
    truck_bus_count: tuple[int, int] = DEFAULT_PRIORS["truck_bus"].count
    pedestrian_count: tuple[int, int] = DEFAULT_PRIORS["pedestrian"].count
    bicycle_count: tuple[int, int] = DEFAULT_PRIORS["bicycle"].count
    point_density: float = 1.5
    clutter_density: float = 0.02
    sigma_v: float = 0.3
    sigma_xy: float = 0.15
    size_jitter: float = 0.08

    def generator(self) -> GeneratorConfig:
        counts = {name: tuple(getattr(self, f"{name}_count")) for name in CLASSES}
        return GeneratorConfig(extent=self.extent, counts=counts, point_density=self.point_density,
                               clutter_density=self.clutter_density, sigma_v=self.sigma_v,
                               sigma_xy=self.sigma_xy, size_jitter=self.size_jitter)


@dataclass(frozen=True)
class ModelSection:
    variant: str = "graph_pillars"
    extent: float = 48.0
    cell: float = 0.5
    point_width: int = 16
    point_layers: int = 3
    graph_radius: float = 2.0
    max_neighbors: int = 16
    edge_distance: bool = True
    kp_sigma: float = 1.0
    kp_kernels: int = 8
    pillar_width: int = 16
    stem_channels: int = 32
    stage_channels: tuple[int, int, int, int] = (32, 64, 64, 64)
    stage_blocks: tuple[int, int, int, int] = (3, 6, 6, 3)
    fpn_channels: int = 64
    head_width: int = 32
    init_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")


@dataclass(frozen=True)
class LossSection:
    car_weight: float = 10.0
    truck_bus_weight: float = 10.0
    pedestrian_weight: float = 200.0
    bicycle_weight: float = 200.0

    def class_weights(self) -> dict[str, float]:
        return {name: getattr(self, f"{name}_weight") for name in CLASSES}


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    augment: bool = True
    rotation: float = 0.1
    shift: float = 1.0
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def augment_config(self, extent: float) -> AugmentConfig | None:
        if not self.augment:
            return None
        return AugmentConfig(rotation=self.rotation, shift=self.shift, flip_prob=self.flip_prob, extent=extent)


@dataclass(frozen=True)
class EvalSection:
    score_threshold: float = 0.3
    nms_iou: float = 0.3


@dataclass(frozen=True)
class RunConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, section: str, **values) -> RunConfig:
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **values)})


def _coerce(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            kind = type(default[0]) if default else float
            values = tuple(kind(p) for p in parts)
            if default and len(values) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return values
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc


def _section_from(cls, values: dict, section: str):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        default = getattr(defaults, key)
        kwargs[key] = raw if not isinstance(raw, str) or isinstance(default, str) else _coerce(raw, default, f"{section}.{key}")
    return cls(**kwargs)


def config_from_mapping(mapping: dict[str, dict]) -> RunConfig:
    sections = {}
    section_types = {f.name: type(getattr(RunConfig(), f.name)) for f in dataclasses.fields(RunConfig)}
    for name, values in mapping.items():
        if name not in section_types:
            raise ConfigError(f"unknown config section [{name}]")
        sections[name] = _section_from(section_types[name], dict(values), name)
    return RunConfig(**sections)


def load_config(path=None, env: dict | None = None) -> RunConfig:
    """Read a config file (or defaults when ``path`` is None) and apply ``PG_SEED``."""
    mapping: dict[str, dict] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(Path(path).read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if parser.defaults():
            raise ConfigError("keys outside a section are not allowed")
        mapping = {s: dict(parser.items(s)) for s in parser.sections()}
    cfg = config_from_mapping(mapping)
    env = os.environ if env is None else env
    if env.get("PG_SEED"):
        cfg = cfg.replace("train", seed=_coerce(env["PG_SEED"], 0, "PG_SEED"))
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            if isinstance(value, (tuple, list)):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
