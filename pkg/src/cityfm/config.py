"""Training hyperparameters shared by the pre-training loop, checkpoints and CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass
class TrainingConfig:
    """All scalar hyperparameters of a pre-training run.

    Full-scale runs use ``batch_size=256`` and ``grid_size=224``; the
    defaults below are sized for a single CPU.
    """

    tau: float = 0.5
    theta: float = 0.05
    batch_size: int = 32
    num_negatives: int = 64
    lr: float = 1e-4
    warmup_fraction: float = 0.1
    max_steps: int = 2000
    plateau_window: int = 200
    plateau_tol: float = 1e-3
    d: int = 128
    lambda_: float = 100.0
    embed_dim: int = 128
    token_dim: int = 64
    grid_size: int = 64
    context_radius_m: float = 50.0
    probe_radius_m: float = 150.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.num_negatives < 1:
            raise ValueError("num_negatives must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")
        if self.d < 2 or self.d % 2:
            raise ValueError(f"d must be even and >= 2, got {self.d}")
        if self.grid_size < 16:
            raise ValueError("grid_size must be >= 16")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


FIELD_HELP = {
    "tau": "temperature of all three contrastive losses",
    "theta": "link-weight difference threshold for similar roads",
    "batch_size": "minibatch size per objective",
    "num_negatives": "sampled negatives per road anchor",
    "lr": "peak learning rate",
    "warmup_fraction": "fraction of max_steps spent in linear warm-up",
    "max_steps": "maximum number of optimizer steps",
    "plateau_window": "window (steps) of the loss-plateau early stop",
    "plateau_tol": "relative moving-average improvement below which training stops",
    "d": "location encoding dimension per coordinate",
    "lambda_": "location encoding frequency rescale factor",
    "embed_dim": "multimodal embedding dimension",
    "token_dim": "token embedding width of the text encoder",
    "grid_size": "raster side length in pixels",
    "context_radius_m": "max distance from an entity to its road segment",
    "probe_radius_m": "max distance used to attach a building to a road context in probes",
    "seed": "random seed",
}
