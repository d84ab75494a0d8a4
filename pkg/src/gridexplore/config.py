"""Run configuration stored as a flat ``section.key = value`` text file."""

from __future__ import annotations

import dataclasses
import enum
import typing
from dataclasses import dataclass, field

from gridexplore.curriculum import CurriculumMode
from gridexplore.encoder import EncoderConfig
from gridexplore.env import EnvConfig
from gridexplore.ppo import PPOConfig
from gridexplore.sensor import LidarConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSettings:
    obstacle_count: int = 4
    max_steps: int = 1000
    success_threshold: float = 0.99


@dataclass(frozen=True)
class CurriculumConfig:
    eval_every: int = 5000
    eval_episodes: int = 3
    window: int = 10
    threshold: float = 0.95
    tau: float = 0.9
    # the last stage also waits for the eval EMA to reach this value
    final_ema: float = 0.95


@dataclass(frozen=True)
class RunConfig:
    mode: CurriculumMode = CurriculumMode.CCRL
    levels: tuple[int, ...] = (1, 2, 3, 4, 5)
    N: int = 4
    seeds: tuple[int, ...] = (0,)
    transition_budget: int = 2_000_000
    output_dir: str = "runs"
    workers: int = 1
    env: EnvSettings = field(default_factory=EnvSettings)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", CurriculumMode(self.mode))
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.levels or self.N < 1 or not self.seeds:
            raise ConfigError("levels and seeds must be non-empty and N >= 1")

    def env_config(self, level: int | str, seed: int = 0) -> EnvConfig:
        map_id = f"level{level}" if isinstance(level, int) else level
        return EnvConfig(
            map_id=map_id,
            obstacle_count=self.env.obstacle_count,
            max_steps=self.env.max_steps,
            success_threshold=self.env.success_threshold,
            encoder=self.encoder,
            lidar=self.lidar,
            seed=seed,
        )

    def replace(self, **changes) -> RunConfig:
        """Copy with top-level fields or dotted keys (``"ppo.learning_rate"``) changed."""
        flat = to_flat(self)
        top = {}
        for key, value in changes.items():
            key = key.replace("__", ".")
            if "." in key:
                if key not in flat:
                    raise ConfigError(f"unknown config key {key!r}")
                flat[key] = _format(value)
            else:
                top[key] = value
        cfg = from_flat(flat)
        return dataclasses.replace(cfg, **top) if top else cfg


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if origin is tuple:
            (inner, *_) = typing.get_args(tp)
            return tuple(_parse(t.strip(), inner, key) for t in text.split(",") if t.strip())
        if tp is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(text.lower())
        if tp in (int, float, str):
            return tp(text)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {text!r}") from e
    raise ConfigError(f"unsupported type for {key}: {tp}")


def to_flat(obj, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(obj):
        if not f.init:
            continue
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(to_flat(value, key + "."))
        else:
            out[key] = _format(value)
    return out


def _build(cls, flat: dict[str, str], prefix: str, used: set[str]):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if not f.init:
            continue
        key = prefix + f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, flat, key + ".", used)
        elif key in flat:
            kwargs[f.name] = _parse(flat[key], tp, key)
            used.add(key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {cls.__name__}: {e}") from e


def from_flat(flat: dict[str, str]) -> RunConfig:
    used: set[str] = set()
    cfg = _build(RunConfig, flat, "", used)
    unknown = sorted(set(flat) - used)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return cfg


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(cfg).items())


def loads(text: str) -> RunConfig:
    flat: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in flat:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        flat[key] = value
    return from_flat(flat)


def load(path) -> RunConfig:
    with open(path) as f:
        return loads(f.read())


def save(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        f.write(dumps(cfg))
