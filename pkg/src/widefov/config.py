"""Model and training configuration, flat ``key=value`` config files, config hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    d: int = 64
    n_blocks: int = 4
    upscale: int = 2
    narrow_channels: int = 64
    stride: int = 4
    backbone: str = "auto"
    backbone_seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.n_blocks < 1:
            raise ConfigError("d and n_blocks must be >= 1")
        if self.upscale not in (1, 2):
            raise ConfigError(f"upscale must be 1 or 2, got {self.upscale}")
        if self.narrow_channels < 6:
            raise ConfigError("narrow_channels must be >= 6 to hold the cue row")
        if self.stride != 4:
            raise ConfigError("the structural encoder has a fixed stride of 4")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    gamma: float = 0.9
    decay_every: int = 10
    batch_size: int = 16
    pretrain_epochs: int = 50
    adv_epochs: int = 2000
    samples_per_epoch: int = 10
    tau: float = 0.7
    blend_width: int = 4
    layer_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seam_layer: int = 0
    adv_bce: bool = False
    seed: int = 0
    deterministic: bool = True
    checkpoint_every: int = 500
    zoom: float = 5 / 3
    down_factor: int = 2
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        for name in ("batch_size", "pretrain_epochs", "adv_epochs", "samples_per_epoch", "decay_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not -1 <= self.tau <= 1:
            raise ConfigError(f"tau must lie in [-1, 1], got {self.tau}")
        if self.blend_width < 0:
            raise ConfigError("blend_width must be >= 0")
        w = self.layer_weights
        if len(w) != 3 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError(f"layer_weights must be 3 non-negative values summing to 1, got {w}")

    @property
    def pretrain_iterations(self) -> int:
        return self.pretrain_epochs * self.samples_per_epoch

    @property
    def adv_iterations(self) -> int:
        return self.adv_epochs * self.samples_per_epoch

    @property
    def total_iterations(self) -> int:
        return self.pretrain_iterations + self.adv_iterations

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.gamma ** (epoch // self.decay_every)


def config_hash(cfg: ModelConfig) -> str:
    """Identity of a model architecture; checkpoints refuse to load across hashes."""
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _coerce(raw: str, kind):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        if "/" in raw:
            num, den = raw.split("/", 1)
            return float(num) / float(den)
        return float(raw)
    return raw.strip()


_TRAIN_TYPES = {"lr": float, "gamma": float, "tau": float, "zoom": float, "adv_bce": bool,
                "deterministic": bool, "layer_weights": tuple}
_MODEL_TYPES = {"backbone": str}


def parse_config(text: str) -> TrainConfig:
    """Parse flat ``key=value`` lines. Model keys may be prefixed with ``model.``."""
    train_kw, model_kw = {}, {}
    model_names = {f.name for f in fields(ModelConfig)}
    train_names = {f.name for f in fields(TrainConfig)} - {"model"}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.removeprefix("model.")
        try:
            if key in train_names:
                kind = _TRAIN_TYPES.get(key, int)
                if kind is tuple:
                    train_kw[key] = tuple(_coerce(v, float) for v in value.split(","))
                else:
                    train_kw[key] = _coerce(value, kind)
            elif key in model_names:
                model_kw[key] = _coerce(value, _MODEL_TYPES.get(key, int))
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return TrainConfig(**train_kw, model=ModelConfig(**model_kw))


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(TrainConfig):
        if f.name == "model":
            continue
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name}={v}")
    for f in fields(ModelConfig):
        lines.append(f"model.{f.name}={getattr(cfg.model, f.name)}")
    return "\n".join(lines) + "\n"
