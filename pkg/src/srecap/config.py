from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

MODES = ("coarse", "fine")


@dataclass(frozen=True)
class TrainConfig:
    """Model sizes and optimisation settings. Defaults are the full-size settings."""

    mode: str = "fine"
    embed_dim: int = 512
    hidden_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    attn_dim: int = 350
    rows: int = 30
    max_concepts: int = 20
    min_count: int = 5
    epochs_xe: int = 15
    epochs_rl: int = 5
    batch_size: int = 50
    lr: float = 4e-4
    rl_lr: float = 4e-4
    beta1: float = 0.8
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    init_scale: float = 0.08
    max_len: int = 16
    beam: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in ("mode", "seed"):
                continue
            if f.name in ("epochs_xe", "epochs_rl"):
                if value < 0:
                    raise ValueError(f"{f.name} must be non-negative")
            elif value <= 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def with_updates(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


# small sizes for tests and laptop runs; batch and lr are tuned for the 40-sentence synthetic split
DESK = dict(
    embed_dim=64, hidden_dim=64, heads=4, ffn_dim=128, attn_dim=48, rows=8,
    batch_size=10, lr=2e-3, rl_lr=5e-5, max_len=12,
)
PRESETS = {"full": {}, "desk": DESK}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return TrainConfig(**{**base, **overrides})


def load_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(data) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return data
