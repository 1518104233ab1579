"""Model configuration, training plan and the resolved run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError

TASKS = ("single-label", "multi-label")
MODALITIES = ("text", "audio", "vision")
DIALECTS = ("mandarin", "cantonese", "wu", "minnan", "chaozhou")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    heads: int = 4
    layers: int = 3
    d_f: int = 32
    d_a: int = 88
    max_len: int = 64
    latent_shape: tuple = (4, 64, 64)
    d_text: int = 768
    channels: tuple = (16, 32, 64)
    num_classes: int = 5
    task: str = "single-label"
    scale_mode: str = "d"
    contrastive_variant: str = "pairwise"

    def __post_init__(self):
        object.__setattr__(self, "latent_shape", tuple(int(s) for s in self.latent_shape))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.d % self.heads:
            raise ConfigError(f"hidden size {self.d} is not divisible by {self.heads} heads")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if len(self.latent_shape) != 3:
            raise ConfigError(f"latent shape must be C x H x W, got {self.latent_shape}")
        if self.scale_mode not in ("d", "sqrt_d"):
            raise ConfigError(f"unknown scale mode {self.scale_mode!r}")
        if self.contrastive_variant not in ("pairwise", "row-softmax"):
            raise ConfigError(f"unknown contrastive variant {self.contrastive_variant!r}")
        if min(self.d, self.d_f, self.d_a, self.d_text, self.layers, self.max_len) < 1:
            raise ConfigError("model dimensions must be positive")

    @classmethod
    def full_size(cls, **overrides) -> "ModelConfig":
        """Full-size preset: width 768, 8 heads, 3 encoder layers."""
        base = dict(d=768, heads=8, layers=3, d_f=256)
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class Ablation:
    use_text: bool = True
    use_audio: bool = True
    use_vision: bool = True
    use_dialect: bool = True
    use_translation: bool = True

    def __post_init__(self):
        if not (self.use_text or self.use_audio or self.use_vision):
            raise ConfigError("at least one modality must stay enabled")

    def enabled(self) -> tuple:
        flags = {"text": self.use_text, "audio": self.use_audio, "vision": self.use_vision}
        return tuple(m for m in MODALITIES if flags[m])

    @classmethod
    def from_names(cls, names) -> "Ablation":
        """Build from ``--ablate`` names (text, audio, vision, dialect, translation)."""
        flags = {}
        for name in names or ():
            key = f"use_{name}"
            if key not in {f.name for f in fields(cls)}:
                raise ConfigError(f"unknown ablation {name!r}")
            flags[key] = False
        return cls(**flags)

    def tag(self) -> str:
        off = [f.name[4:] for f in fields(self) if not getattr(self, f.name)]
        return "full" if not off else "no-" + "-".join(off)


@dataclass(frozen=True)
class TrainPlan:
    warmup_steps: int = 100
    warmup_batch: int = 32
    warmup_lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    dialects: tuple = ("mandarin", "cantonese")
    ablation: Ablation = field(default_factory=Ablation)
    aux_contrastive_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dialects", tuple(self.dialects))
        if isinstance(self.ablation, dict):
            object.__setattr__(self, "ablation", Ablation(**self.ablation))
        if not 1 <= len(self.dialects) <= 2:
            raise ConfigError("fusion takes one or two dialects")
        if len(set(self.dialects)) != len(self.dialects):
            raise ConfigError(f"duplicate dialect in {self.dialects}")
        if min(self.warmup_steps, self.epochs) < 0:
            raise ConfigError("step and epoch counts must be non-negative")
        if self.batch_size < 1 or self.lr <= 0 or self.warmup_lr <= 0:
            raise ConfigError("batch size and learning rates must be positive")

    @property
    def active_dialects(self) -> tuple:
        if self.ablation.use_dialect and len(self.dialects) == 2:
            return self.dialects
        return self.dialects[:1]


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    plan: TrainPlan = field(default_factory=TrainPlan)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw or {})
        unknown = set(raw) - {"model", "plan"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        model = _build(ModelConfig, raw.get("model", {}))
        plan_raw = dict(raw.get("plan", {}))
        if "ablation" in plan_raw:
            plan_raw["ablation"] = _build(Ablation, plan_raw["ablation"])
        plan = _build(TrainPlan, plan_raw)
        return cls(model, plan)

    def with_model(self, **kw) -> "RunConfig":
        return replace(self, model=replace(self.model, **kw))

    def with_plan(self, **kw) -> "RunConfig":
        return replace(self, plan=replace(self.plan, **kw))


def _build(cls, raw: dict):
    if isinstance(raw, cls):
        return raw
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
