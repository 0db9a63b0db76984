from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 6
    K: int = 6
    strides: tuple[int, ...] = (1, 2, 4, 8)
    tau: float = 0.001
    gamma: float = 0.2
    floor: float = 1e-6
    mu: float = 0.05
    alpha: float = 10.0
    iters: int = 3
    B: int = 64
    T: int = 32
    grid: tuple[int, int] = (14, 14)
    depth: int = 2
    attn_scale: str = "D"
    pairwise_self_term: str = "transition"
    seed: int = 0
    # ablation toggles
    use_min: bool = True
    use_fsn: bool = True
    single_scale: bool = False
    slots_enabled: bool = True
    gamma_enabled: bool = True
    temporal_augmentation: bool = False
    time_embedding: bool = True
    slot_loss: bool = True
    inference_refine: bool = True
    first_frame_ref_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        for s in self.strides:
            if self.T % s or self.T // s < 2:
                raise ValueError(f"stride {s} incompatible with T={self.T}")
        if not (self.use_min or self.use_fsn):
            raise ValueError("at least one of the MIN and FSN pathways must be enabled")
        if self.attn_scale not in ("D", "B"):
            raise ValueError("attn_scale must be 'D' or 'B'")
        if self.pairwise_self_term not in ("transition", "grid"):
            raise ValueError("pairwise_self_term must be 'transition' or 'grid'")
        if self.tau <= 0 or self.mu <= 0:
            raise ValueError("temperatures must be positive")

    @property
    def N(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def active_strides(self) -> tuple[int, ...]:
        return self.strides[:1] if self.single_scale else self.strides

    @property
    def effective_gamma(self) -> float | None:
        return self.gamma if self.gamma_enabled else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    record_train_predictions: bool = False
    log_every: int = 0
