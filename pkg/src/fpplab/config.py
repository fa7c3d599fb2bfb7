"""Run configuration in flat ``[section]`` / ``key = value`` text form."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import DataError, InvalidArgument
from .nn.network import NetworkConfig
from .nn.train import Schedule
from .selfsup import LossWeights
from .sim import SystemGeometry
from .tpu import FrequencySet

DESK_KINDS = ("isolated_blobs", "step", "low_reflectivity", "motion_blur")


@dataclass(frozen=True)
class ScenesConfig:
    count: int = 12
    kinds: tuple = DESK_KINDS
    split: tuple = (8, 4, 0)  # train, val, test
    margin: int = 8
    max_height: float = 1.2
    noise_sigma: float = 0.0
    quantize: bool = False
    n_steps: int = 4

    def params(self) -> dict:
        return {"margin": self.margin, "max_height": self.max_height,
                "noise_sigma": self.noise_sigma, "quantize": self.quantize}


@dataclass(frozen=True)
class PreprocessConfig:
    threshold: float = 4.0
    min_area_fraction: float = 0.01


@dataclass(frozen=True)
class LossConfig:
    w1: float = 1.0
    w2: float = 2.0
    circular: bool = True
    interpolation: str = "geodesic"


@dataclass(frozen=True)
class TrainingConfig:
    """Schedule values; stage loss weights come from :class:`LossConfig`."""

    stage1_epochs: int = 20
    stage2_epochs: int = 20
    stage1_lr: float = 5e-3
    stage2_lr: float = 1e-5
    decay: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    epsilon: float = 1e-8


@dataclass(frozen=True)
class SeedsConfig:
    data: int = 0
    train: int = 0


@dataclass(frozen=True)
class PathsConfig:
    data: str = "data"
    out: str = "run"


@dataclass(frozen=True)
class RunConfig:
    geometry: SystemGeometry = field(default_factory=SystemGeometry)
    frequencies: tuple = (1, 4, 16)
    scenes: ScenesConfig = field(default_factory=ScenesConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        freqs = FrequencySet(tuple(self.frequencies))
        if freqs.highest != self.geometry.period_number:
            raise InvalidArgument(f"highest frequency {freqs.highest} must equal geometry "
                                  f"period_number {self.geometry.period_number}")
        LossWeights(self.loss.w1, self.loss.w2)

    @property
    def frequency_set(self) -> FrequencySet:
        return FrequencySet(tuple(self.frequencies))

    def schedule(self) -> Schedule:
        t = self.training
        return Schedule(stage1_epochs=t.stage1_epochs, stage2_epochs=t.stage2_epochs,
                        stage1_lr=t.stage1_lr, stage2_lr=t.stage2_lr, decay=t.decay,
                        stage1_weights=(self.loss.w1, 0.0), stage2_weights=(self.loss.w1, self.loss.w2),
                        beta1=t.beta1, beta2=t.beta2, weight_decay=t.weight_decay, epsilon=t.epsilon,
                        interpolation=self.loss.interpolation, circular=self.loss.circular)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seeds=SeedsConfig(seed, seed))


_SECTIONS = ("geometry", "scenes", "network", "training", "loss", "preprocess", "seeds", "paths")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else str
            return tuple(_parse(s, kind(), where) if kind is not str else s for s in items)
        return raw
    except ValueError as exc:
        raise InvalidArgument(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from exc


def _section_to(cls, section, name: str):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise InvalidArgument(f"[{name}]: unknown keys {sorted(unknown)}")
    kwargs = {k: _parse(section[k], getattr(defaults, k), f"[{name}] {k}") for k in section}
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config: {exc}") from exc
    unknown = set(cp.sections()) - set(_SECTIONS) - {"frequencies"}
    if unknown:
        raise InvalidArgument(f"unknown config sections {sorted(unknown)}")
    kwargs = {}
    classes = {"geometry": SystemGeometry, "scenes": ScenesConfig, "network": NetworkConfig,
               "training": TrainingConfig, "loss": LossConfig, "preprocess": PreprocessConfig,
               "seeds": SeedsConfig, "paths": PathsConfig}
    for name, cls in classes.items():
        if cp.has_section(name):
            kwargs[name] = _section_to(cls, cp[name], name)
    if cp.has_section("frequencies"):
        sec = cp["frequencies"]
        if set(sec) - {"periods"}:
            raise InvalidArgument("[frequencies] only accepts 'periods'")
        if "periods" in sec:
            kwargs["frequencies"] = _parse(sec["periods"], (1,), "[frequencies] periods")
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp["geometry"] = {f.name: _format(getattr(cfg.geometry, f.name)) for f in fields(cfg.geometry)}
    cp["frequencies"] = {"periods": _format(tuple(cfg.frequencies))}
    for name in _SECTIONS[1:]:
        obj = getattr(cfg, name)
        cp[name] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def build_dataset(cfg: RunConfig, out_dir, export_pgm: bool = False):
    """Simulate the scene set described by ``cfg`` into ``out_dir``; returns the manifest."""
    from .sim import make_dataset, random_scene_list

    sc = cfg.scenes
    scenes = random_scene_list(sc.count, sc.kinds, cfg.geometry, cfg.seeds.data, sc.params())
    pre = {"threshold": cfg.preprocess.threshold, "min_area_fraction": cfg.preprocess.min_area_fraction}
    return make_dataset(scenes, cfg.geometry, cfg.frequency_set, out_dir, n_steps=sc.n_steps,
                        seed=cfg.seeds.data, split=sc.split, preprocess=pre, export_pgm=export_pgm)


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(serialize_config(cfg))
    return path
