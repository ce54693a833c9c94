"""Hyperparameter record and its flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .critic import CriticFeatureFlags, CriticSpec
from .embedding import EmbedderSpec
from .errors import ConfigError
from .models import ModelSpec

CONFIG_HEADER = "# selfcritic-config v1"


@dataclass(frozen=True)
class MetaConfig:
    # episode shape
    n_way: int = 5
    k_shot: int = 1
    n_target: int = 75
    # inner loop
    n_support_steps: int = 5
    n_target_steps: int = 1
    alpha: float = 0.1
    gamma: float = 0.1
    learnable_inner_lr: bool = False
    # outer loop
    beta: float = 1e-3
    meta_batch: int = 4
    outer_optimizer: str = "adam"
    # critic conditioning
    use_predictions: bool = True
    use_params: bool = False
    use_task_embedding: bool = False
    # architecture
    hidden: tuple = (40, 40)
    critic_channels: int = 8
    critic_layers: int = 5
    critic_hidden: int = 32
    critic_min_length: int = 32
    embed_dim: int = 16
    embed_hidden: int = 32
    relation_hidden: int = 32
    # data
    pool_family: str = "ambiguous"
    pool_classes: int = 100
    pool_seed: int = 0
    d_signal: int = 8
    d_spurious: int = 4
    separation: float = 2.0
    spurious_scale: float = 3.0
    spurious_noise: float = 0.1
    shuffle_columns: bool = False
    image_root: str = ""
    image_size: int = 28
    # schedule
    epochs: int = 1
    batches_per_epoch: int = 500
    eval_interval: int = 50
    val_episodes: int = 200
    test_episodes: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_support_steps < 0 or self.n_target_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if not (self.alpha >= 0 and self.gamma >= 0):
            raise ConfigError("inner learning rates alpha and gamma must be non-negative")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        if self.meta_batch < 1:
            raise ConfigError("meta_batch must be at least 1")
        if self.outer_optimizer not in ("adam", "sgd"):
            raise ConfigError(f"outer_optimizer must be 'adam' or 'sgd', got {self.outer_optimizer!r}")
        if self.pool_family not in ("blob", "ambiguous", "images"):
            raise ConfigError(f"unknown pool_family {self.pool_family!r}")
        if min(self.n_way, self.k_shot) < 1 or self.n_target < 1:
            raise ConfigError("n_way, k_shot and n_target must be positive")
        if self.eval_interval < 1 or self.val_episodes < 1 or self.test_episodes < 1:
            raise ConfigError("eval_interval and episode counts must be positive")
        if self.epochs < 0 or self.batches_per_epoch < 0:
            raise ConfigError("epochs and batches_per_epoch must be non-negative")
        try:
            self.flags
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def flags(self) -> CriticFeatureFlags:
        return CriticFeatureFlags(self.use_predictions, self.use_params, self.use_task_embedding)

    @property
    def outer_steps(self) -> int:
        return self.epochs * self.batches_per_epoch

    @property
    def critic_spec(self) -> CriticSpec:
        return CriticSpec(self.critic_channels, self.critic_layers, self.critic_hidden, self.critic_min_length)

    def model_spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(input_dim, self.hidden, self.n_way)

    def embedder_spec(self, input_dim: int) -> EmbedderSpec:
        return EmbedderSpec(input_dim, self.embed_dim, self.relation_hidden, self.embed_hidden)

    @property
    def needs_critic(self) -> bool:
        return self.n_target_steps > 0

    def replace(self, **changes) -> "MetaConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "MetaConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in values.items()})

    def to_text(self) -> str:
        lines = [CONFIG_HEADER]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetaConfig":
        return cls.from_dict(parse_config_text(text))

    @classmethod
    def from_file(cls, path) -> "MetaConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _coerce(f: dataclasses.Field, value):
    if not isinstance(value, str):
        if f.name == "hidden":
            return tuple(value)
        return value
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "tuple":
            return tuple(int(v) for v in value.split(",") if v.strip())
        return value
    except ValueError:
        raise ConfigError(f"invalid value {value!r} for {f.name} ({kind})") from None
