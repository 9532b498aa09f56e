"""Flat ``section.key = value`` configuration files mapped onto the library's dataclasses.

Every key belongs to a section (``schedule.f_perc``, ``world.density``, ...).
Values are coerced from the annotated field type; tuples are comma separated
and ``none`` clears an optional field. Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

from .env import MODES, EnvConfig
from .learn import PpoConfig
from .pointcloud import PillarGridSpec
from .policy import ConfigurationError, PolicyConfig
from .reward import CorridorParams, RewardConfig, RewardWeights, SafetyParams, VelocityParams
from .schedule import ScheduleConfig
from .world import DynamicsParams, EpisodeLimits, LidarModel, WorldConfig


@dataclass(frozen=True)
class TrainSettings:
    variant: str = "proposed"
    curriculum: str = "two_stage"  # two_stage | async_only
    n_envs: int = 64
    horizon: int = 128
    stage1_iters: int = 150
    stage2_iters: int = 150
    stage1_threshold: Optional[float] = 0.7
    window: int = 200
    collapse_threshold: Optional[float] = None


@dataclass(frozen=True)
class EvalSettings:
    mode: str = "proposed"
    trials: int = 100
    checkpoint: Optional[str] = None
    v_des: Optional[float] = None
    density: Optional[float] = None
    deterministic: bool = True
    record_steps: bool = False


@dataclass(frozen=True)
class BenchSettings:
    sizes: tuple[int, ...] = (0, 1000, 5000, 20000)
    repetitions: int = 50


@dataclass(frozen=True)
class AblateSettings:
    modes: tuple[str, ...] = MODES
    speeds: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    densities: tuple[float, ...] = (0.1, 0.15, 0.2, 0.25)
    fixed_density: float = 0.25
    fixed_speed: float = 4.0


@dataclass(frozen=True)
class EnvSettings:
    v_des_min: float = 1.0
    v_des_max: float = 4.0
    safety_beams: int = 36


@dataclass(frozen=True)
class Settings:
    seed: int = 0
    world: WorldConfig = WorldConfig()
    grid: PillarGridSpec = PillarGridSpec()
    lidar_noise_std: float = 0.0
    dynamics: DynamicsParams = DynamicsParams()
    limits: EpisodeLimits = EpisodeLimits()
    safety: SafetyParams = SafetyParams()
    velocity: VelocityParams = VelocityParams()
    corridor: CorridorParams = CorridorParams()
    weights: RewardWeights = RewardWeights()
    env_opts: EnvSettings = EnvSettings()
    schedule: ScheduleConfig = ScheduleConfig()
    policy: PolicyConfig = PolicyConfig()
    ppo: PpoConfig = PpoConfig()
    train: TrainSettings = TrainSettings()
    eval: EvalSettings = EvalSettings()
    bench: BenchSettings = BenchSettings()
    ablate: AblateSettings = AblateSettings()

    @property
    def env(self) -> EnvConfig:
        return EnvConfig(
            world=self.world,
            lidar=LidarModel(self.grid, self.lidar_noise_std),
            dynamics=self.dynamics,
            limits=self.limits,
            reward=RewardConfig(self.safety, self.velocity, self.corridor, self.weights),
            v_des_range=(self.env_opts.v_des_min, self.env_opts.v_des_max),
            safety_beams=self.env_opts.safety_beams,
        )

    def policy_config(self) -> PolicyConfig:
        return replace(self.policy, image_shape=self.grid.shape, r_max=self.grid.r_max)

    def to_dict(self) -> dict:
        return {sec: (dataclasses.asdict(getattr(self, attr)) if dataclasses.is_dataclass(getattr(self, attr))
                      else getattr(self, attr))
                for sec, attr in _SECTION_ATTR.items()} | {"seed": self.seed, "lidar": {"noise_std": self.lidar_noise_std}}


# config section -> Settings attribute
_SECTION_ATTR = {
    "world": "world", "grid": "grid", "dynamics": "dynamics", "limits": "limits",
    "safety": "safety", "velocity": "velocity", "corridor": "corridor", "weights": "weights",
    "env": "env_opts", "schedule": "schedule", "policy": "policy", "ppo": "ppo",
    "train": "train", "eval": "eval", "bench": "bench", "ablate": "ablate",
}
# derived from the grid, never set directly
_POLICY_DERIVED = {"image_shape", "r_max"}


def _coerce(text: str, hint: Any, key: str) -> Any:
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin is Union:
            if type(None) in args and text.lower() == "none":
                return None
            rest = [a for a in args if a is not type(None)]
            if len(rest) == 1:
                return _coerce(text, rest[0], key)
            # float or (lo, hi)
            if "," in text:
                tup = next(a for a in rest if typing.get_origin(a) is tuple)
                return _coerce(text, tup, key)
            return _coerce(text, next(a for a in rest if a in (int, float)), key)
        if origin is tuple:
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_coerce(p, args[0], key) for p in parts)
            if len(parts) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values")
            return tuple(_coerce(p, a, key) for p, a in zip(parts, args))
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
    except (ValueError, StopIteration) as exc:
        raise ConfigurationError(f"{key}: cannot parse {text!r}: {exc}") from None
    raise ConfigurationError(f"{key}: unsupported field type {hint}")


def _apply(obj, section: str, values: dict[str, str]):
    hints = typing.get_type_hints(type(obj))
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for k, v in values.items():
        if k not in names or (section == "policy" and k in _POLICY_DERIVED):
            raise ConfigurationError(f"unknown config key {section}.{k}")
        changes[k] = _coerce(v, hints[k], f"{section}.{k}")
    try:
        return replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{section}: {exc}") from None


def settings_from_mapping(flat: dict[str, str], base: Settings = Settings()) -> Settings:
    """Build settings from ``{"section.key": "value"}``; ``seed`` and ``lidar.noise_std`` are also accepted."""
    grouped: dict[str, dict[str, str]] = {}
    top = {}
    for key, value in flat.items():
        if key in ("seed", "lidar.noise_std"):
            top[key] = value
            continue
        section, dot, name = key.partition(".")
        if not dot or section not in _SECTION_ATTR or not name:
            raise ConfigurationError(f"unknown config key {key}")
        grouped.setdefault(section, {})[name] = value
    changes = {}
    for section, values in grouped.items():
        attr = _SECTION_ATTR[section]
        changes[attr] = _apply(getattr(base, attr), section, values)
    if "seed" in top:
        changes["seed"] = _coerce(top["seed"], int, "seed")
    if "lidar.noise_std" in top:
        changes["lidar_noise_std"] = _coerce(top["lidar.noise_std"], float, "lidar.noise_std")
    s = replace(base, **changes)
    _validate(s)
    return s


def _validate(s: Settings) -> None:
    if s.eval.mode not in MODES:
        raise ConfigurationError(f"eval.mode must be one of {MODES}")
    bad = [m for m in s.ablate.modes if m not in MODES]
    if bad:
        raise ConfigurationError(f"ablate.modes: unknown mode(s) {bad}")
    if s.train.variant not in ("proposed", "no_tem", "sync_baseline"):
        raise ConfigurationError("train.variant must be proposed, no_tem or sync_baseline")
    if s.train.curriculum not in ("two_stage", "async_only"):
        raise ConfigurationError("train.curriculum must be two_stage or async_only")
    if s.bench.repetitions < 30:
        raise ConfigurationError("bench.repetitions must be at least 30")
    if not 0 < s.env_opts.v_des_min <= s.env_opts.v_des_max:
        raise ConfigurationError("env.v_des_min must be positive and <= env.v_des_max")


def parse_config_text(text: str) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}".replace("\n", " ")) from None
    return dict(cp["config"])


def load_config(path: Union[str, Path, None], overrides: Optional[dict[str, str]] = None) -> Settings:
    flat: dict[str, str] = {}
    if path is not None:
        try:
            flat = parse_config_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    flat.update(overrides or {})
    return settings_from_mapping(flat)


def dump_config(s: Settings) -> str:
    """Render settings back into the flat file format (round-trips through :func:`load_config`)."""
    lines = [f"seed = {s.seed}", f"lidar.noise_std = {s.lidar_noise_std!r}"]
    for section, attr in _SECTION_ATTR.items():
        obj = getattr(s, attr)
        for f in dataclasses.fields(obj):
            if section == "policy" and f.name in _POLICY_DERIVED:
                continue
            v = getattr(obj, f.name)
            if isinstance(v, tuple):
                text = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif v is None:
                text = "none"
            elif isinstance(v, float):
                text = repr(v)
            else:
                text = str(v)
            lines.append(f"{section}.{f.name} = {text}")
    return "\n".join(lines) + "\n"
