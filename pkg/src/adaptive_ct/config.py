"""Run configuration: a flat ``key = value`` text file with a version key.

Lines starting with ``#`` are comments. Values are typed by the field they
set; lists are comma separated. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .agent import AgentConfig
from .env import CTEnvironment, RewardMode
from .phantoms import DatasetSpec, ood_rotation_split
from .projector import Geometry
from .recon import ReconConfig
from .trainer import TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    # phantoms
    shape_kinds: tuple[str, ...] = ("ellipse",)
    train_count: int = 3000
    test_count: int = 100
    image_size: int = 128
    scale_min: float = 0.25
    scale_max: float = 0.40
    shift_min: float = -0.1
    shift_max: float = 0.1
    aspect: float = 0.5
    rotation_step: float = 5.0
    test_rotations: str = "ood"
    data_seed: int = 0
    # projector
    detector_count: int = 0  # 0 picks ceil(1.5 * image_size)
    noise_level: float = 0.0
    # reconstruction
    sirt_iterations: int = 150
    box_lo: float = 0.0
    box_hi: float = 1.0
    warm_start: bool = False
    # episodes
    horizon: int = 3
    reward_mode: str = "end_to_end"
    mask_repeats: bool = False
    # network
    hidden: int = 256
    groups: int = 4
    leaky_slope: float = 0.01
    # training
    gamma: float = 0.99
    actor_weight: float = 1.0
    critic_weight: float = 0.5
    entropy_weight: float = 0.01
    lr: float = 1e-4
    weight_decay: float = 1e-5
    critic_lr: float = -1.0  # negative: same as lr
    episodes: int = 1000
    seed: int = 0
    checkpoint_every: int = 0
    # evaluation
    eval_seed: int = 0
    eval_noise_level: float = -1.0  # negative: same as noise_level
    greedy: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}", "version")
        if self.test_rotations not in ("ood", "train"):
            raise ConfigError(f"test_rotations must be 'ood' or 'train', got {self.test_rotations!r}",
                              "test_rotations")
        try:
            RewardMode(self.reward_mode)
        except ValueError:
            raise ConfigError(f"unknown reward_mode {self.reward_mode!r}", "reward_mode") from None

    # -- views onto the module configs ------------------------------------

    def rotation_grid(self) -> list[float]:
        n = round(180.0 / self.rotation_step)
        return [i * self.rotation_step for i in range(n)]

    def dataset_spec(self, split: str = "train") -> DatasetSpec:
        grid = self.rotation_grid()
        seed = self.data_seed
        count = self.train_count
        if split == "test":
            count = self.test_count
            seed = self.data_seed + 1
            if self.test_rotations == "ood":
                grid = ood_rotation_split(grid)
        return DatasetSpec(tuple(self.shape_kinds), count, tuple(grid),
                           (self.scale_min, self.scale_max), (self.shift_min, self.shift_max),
                           self.image_size, seed, self.aspect)

    def geometry(self) -> Geometry:
        return Geometry(self.image_size, self.detector_count or None)

    def recon_config(self) -> ReconConfig:
        return ReconConfig(self.sirt_iterations, self.box_lo, self.box_hi, self.warm_start)

    def environment(self, noise_level: float | None = None) -> CTEnvironment:
        level = self.noise_level if noise_level is None else noise_level
        return CTEnvironment(self.geometry(), self.recon_config(), RewardMode(self.reward_mode), level)

    def eval_environment(self) -> CTEnvironment:
        level = self.noise_level if self.eval_noise_level < 0 else self.eval_noise_level
        return self.environment(level)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(self.image_size, self.hidden, self.groups, self.leaky_slope)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            gamma=self.gamma, actor_weight=self.actor_weight, critic_weight=self.critic_weight,
            entropy_weight=self.entropy_weight, lr=self.lr, weight_decay=self.weight_decay,
            critic_lr=None if self.critic_lr < 0 else self.critic_lr, episodes=self.episodes,
            horizon=self.horizon, reward_mode=RewardMode(self.reward_mode), seed=self.seed,
            mask_repeats=self.mask_repeats)

    # -- text form ----------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(item.strip() for item in raw.split(",") if item.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {key!r}", key) from None


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}", key)
        values[key] = _coerce(key, raw, getattr(base, key))
    return dataclasses.replace(base, **values)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_FIELD_TYPES)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {key!r}", key)
    data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return RunConfig(**data)
