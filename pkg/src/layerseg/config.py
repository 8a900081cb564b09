"""Training configuration, presets, and the flat key=value config format.

Config files are plain text, one ``namespace.key = value`` per line, with
``#`` comments. CLI overrides take precedence over the file, which takes
precedence over the chosen preset.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from layerseg.errors import ValidationError
from layerseg.model import ModelConfig


@dataclass
class TrainConfig:
    base_lr: float = 5e-4
    warmup_steps: int = 2000
    decay_period: int = 100_000
    decay_factor: float = 0.5
    lambda_scale_period: int = 100_000
    lambda_scale_factor: float = 5.0
    lambda1: float = 100.0
    lambda2_init: float = 0.01
    lambda3_init: float = 0.01
    total_steps: int = 500_000
    batch_size: int = 16
    seed: int = 0
    checkpoint_interval: int = 1000
    enable_rep: bool = True  # consistency-loss ablation switch

    def __post_init__(self):
        for name in ("warmup_steps", "decay_period", "lambda_scale_period",
                     "total_steps", "batch_size", "checkpoint_interval"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValidationError("decay_factor must lie in (0, 1)")


@dataclass
class FullConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train)}

    @classmethod
    def from_dict(cls, d: dict) -> "FullConfig":
        return cls(
            model=ModelConfig.from_dict(d["model"]),
            train=TrainConfig(**d["train"]),
        )


def desk_preset() -> FullConfig:
    """Small configuration for local smoke verification.

    Schedule constants are scale-adapted: shorter warmup, and a smaller
    entropy weight — at a few thousand steps the full entropy weight
    drives the masks into a degenerate constant one-hot before the
    reconstruction signal can differentiate the slots.
    """
    return FullConfig(
        model=ModelConfig(
            crop_h=64,
            crop_w=128,
            feat_dim=32,
            enc_channels=(16, 32, 32),
            mask_hidden=16,
            layer_hidden=16,
        ),
        train=TrainConfig(
            warmup_steps=500,
            total_steps=5000,
            batch_size=16,
            lambda2_init=0.001,
        ),
    )


def paper_preset() -> FullConfig:
    return FullConfig()


PRESETS = {"desk": desk_preset, "paper": paper_preset}

# namespaced config keys -> (section, field)
_KEY_MAP = {
    "binding.T": ("model", "binding_steps"),
    "binding.K": ("model", "num_slots"),
    "binding.D": ("model", "feat_dim"),
    "rqm.enable_rqn": ("model", "enable_rqn"),
    "rqm.enable_sqn": ("model", "enable_sqn"),
    "rqm.paper_norm_axis": ("model", "paper_norm_axis"),
    "model.crop_h": ("model", "crop_h"),
    "model.crop_w": ("model", "crop_w"),
    "model.eta": ("model", "eta"),
    "model.momentum": ("model", "momentum"),
    "model.enc_channels": ("model", "enc_channels"),
    "model.mask_hidden": ("model", "mask_hidden"),
    "model.layer_hidden": ("model", "layer_hidden"),
    "train.base_lr": ("train", "base_lr"),
    "train.warmup_steps": ("train", "warmup_steps"),
    "train.decay_period": ("train", "decay_period"),
    "train.decay_factor": ("train", "decay_factor"),
    "train.lambda_scale_period": ("train", "lambda_scale_period"),
    "train.lambda_scale_factor": ("train", "lambda_scale_factor"),
    "train.lambda1": ("train", "lambda1"),
    "train.lambda2_init": ("train", "lambda2_init"),
    "train.lambda3_init": ("train", "lambda3_init"),
    "train.total_steps": ("train", "total_steps"),
    "train.batch_size": ("train", "batch_size"),
    "train.seed": ("train", "seed"),
    "train.checkpoint_interval": ("train", "checkpoint_interval"),
    "train.enable_rep": ("train", "enable_rep"),
}


def _parse_value(field_type: type, raw: str):
    raw = raw.strip()
    if field_type is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValidationError(f"not a boolean: {raw!r}")
    if field_type is tuple:
        return tuple(int(v) for v in raw.strip("()").split(",") if v.strip())
    return field_type(raw)


def apply_overrides(config: FullConfig, overrides: dict[str, str]) -> FullConfig:
    """Apply ``namespace.key -> raw string`` overrides to a config."""
    model_kw: dict = {}
    train_kw: dict = {}
    for key, raw in overrides.items():
        if key not in _KEY_MAP:
            raise ValidationError(f"unknown config key: {key}")
        section, name = _KEY_MAP[key]
        current = getattr(getattr(config, section), name)
        value = _parse_value(type(current), str(raw))
        (model_kw if section == "model" else train_kw)[name] = value
    return FullConfig(
        model=replace(config.model, **model_kw),
        train=replace(config.train, **train_kw),
    )


def load_config_file(path: str | Path) -> dict[str, str]:
    """Read a flat key=value file into an override dict."""
    overrides: dict[str, str] = {}
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, raw = line.split("=", 1)
        overrides[key.strip()] = raw.strip()
    return overrides


def save_config_file(path: str | Path, config: FullConfig) -> None:
    lines = []
    for key, (section, name) in _KEY_MAP.items():
        value = getattr(getattr(config, section), name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")
