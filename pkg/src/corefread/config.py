"""Model and training configuration, mirrored one-to-one by the JSON config
file format: {"model": {...}, "train": {...}}."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .supervision import SUPERVISION_KINDS

VARIANTS = ("base", "early", "late", "both")


@dataclass
class SupervisionAssignment:
    """Binds one supervision kind to one attention head."""

    kind: str
    location: str  # "early" | "late"
    layer: int
    head: int

    def key(self):
        return (self.location, self.layer, self.head)


@dataclass
class ModelConfig:
    variant: str = "base"
    early_layers: int = 4
    late_layers: int = 1
    heads: int = 4
    d_model: int = 200
    hidden: int = 100
    dropout: float = 0.1
    attn_dim: int | None = None  # per-layer total K/Q/V width; d_model when None
    ffn_mult: int = 4
    word_dim: int = 100
    char_dim: int = 16
    char_filters: int = 100
    char_width: int = 5
    position_signal: bool = True  # sinusoid before the early encoder
    supervision: list[SupervisionAssignment] = field(default_factory=list)
    lambda_weight: float = 0.3
    unweighted_supervision: bool = False
    external_embedding: str | None = None  # None | "hash"
    external_dim: int = 128
    external_dropout: float = 0.2

    def resolved_attn_dim(self) -> int:
        return self.d_model if self.attn_dim is None else self.attn_dim

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.resolved_attn_dim() % self.heads != 0:
            raise ValueError(
                f"attention dimension {self.resolved_attn_dim()} not divisible by"
                f" {self.heads} heads"
            )
        if self.external_embedding is None and self.word_dim + self.char_filters != self.d_model:
            raise ValueError(
                f"embedding width {self.word_dim} + {self.char_filters} must equal"
                f" d_model {self.d_model}"
            )
        if 2 * self.hidden != self.d_model:
            raise ValueError(
                f"2*hidden ({2 * self.hidden}) must equal d_model ({self.d_model})"
                " so recurrent and attention contextual stages are interchangeable"
            )
        if self.external_embedding not in (None, "hash"):
            raise ValueError(f"unknown external embedding {self.external_embedding!r}")
        seen_keys = set()
        for a in self.supervision:
            if a.kind not in SUPERVISION_KINDS:
                raise ValueError(f"unknown supervision kind {a.kind!r}")
            if a.location == "early":
                if self.variant not in ("early", "both"):
                    raise ValueError(
                        f"early supervision requires an early encoder, variant is {self.variant!r}"
                    )
                if not 0 <= a.layer < self.early_layers:
                    raise ValueError(f"early layer {a.layer} out of range")
            elif a.location == "late":
                if self.variant not in ("late", "both"):
                    raise ValueError(
                        f"late supervision requires a late encoder, variant is {self.variant!r}"
                    )
                if not 0 <= a.layer < self.late_layers:
                    raise ValueError(f"late layer {a.layer} out of range")
            else:
                raise ValueError(f"unknown supervision location {a.location!r}")
            if not 0 <= a.head < self.heads:
                raise ValueError(f"head {a.head} out of range for {self.heads} heads")
            if a.key() in seen_keys:
                raise ValueError(f"multiple supervision kinds on head {a.key()}")
            seen_keys.add(a.key())
        return self

    def default_assignment(self, kind: str) -> SupervisionAssignment:
        """Place a kind on the conventional head: third-of-four early layer
        (more generally early_layers - 2) or the first late layer, head 0."""
        if self.variant in ("early", "both"):
            return SupervisionAssignment(kind, "early", max(self.early_layers - 2, 0), 0)
        if self.variant == "late":
            return SupervisionAssignment(kind, "late", 0, 0)
        raise ValueError("the base variant has no self-attention heads to supervise")

    def to_obj(self):
        obj = asdict(self)
        obj["supervision"] = [asdict(a) for a in self.supervision]
        return obj

    @classmethod
    def from_obj(cls, obj):
        obj = dict(obj)
        obj["supervision"] = [
            SupervisionAssignment(**a) for a in obj.get("supervision", [])
        ]
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    eval_batch_size: int = 64
    optimizer_lr: float = 0.001
    scheduler: str = "constant"  # "constant" | "noam"
    warmup: int = 8000
    ema_decay: float = 0.9999
    patience: int = 2  # epochs without dev improvement before stopping
    grad_clip: float = 5.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.scheduler not in ("constant", "noam"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        return self

    def to_obj(self):
        return asdict(self)

    @classmethod
    def from_obj(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**obj)


def load_config(path):
    """Read {"model": ..., "train": ...}; both sections optional."""
    with open(path) as fh:
        obj = json.load(fh)
    model = ModelConfig.from_obj(obj.get("model", {})).validate()
    train = TrainConfig.from_obj(obj.get("train", {})).validate()
    return model, train


def save_config(path, model: ModelConfig, train: TrainConfig):
    with open(path, "w") as fh:
        json.dump({"model": model.to_obj(), "train": train.to_obj()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
