"""Frozen dataclass configs for the toy diffusion model and its training."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("schedule needs at least one step")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1")


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    channels: int = 3
    patch_size: int = 4
    model_dim: int = 64
    n_heads: int = 4
    mlp_hidden: int = 256
    n_classes: int = 4
    class_tokens: int = 4
    enc_sinusoid_dim: int = 64
    enc_hidden: int = 256  # 4x the sinusoid dim
    sinusoid_base: float = 10000.0

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError("patch_size must divide image_size")
        if self.model_dim % self.n_heads != 0:
            raise ConfigError("n_heads must divide model_dim")
        if self.model_dim % 2 != 0:
            raise ConfigError("model_dim must be even (timestep sinusoid)")
        if self.enc_sinusoid_dim % 2 != 0:
            raise ConfigError("enc_sinusoid_dim must be even")
        for name in ("image_size", "channels", "patch_size", "model_dim", "n_heads",
                     "mlp_hidden", "n_classes", "class_tokens", "enc_sinusoid_dim", "enc_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("steps, batch size and learning rate must be positive")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")


def config_dict(cfg) -> dict:
    return asdict(cfg)
