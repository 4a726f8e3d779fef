"""Differentiable encoders, autodiff tape, optimizer and checkpoints."""

from cityfm.neural.checkpoint import ModelCheckpoint
from cityfm.neural.encoders import (
    Vocabulary,
    area_encode,
    build_vocab,
    fuse_visual,
    init_params,
    text_encode,
    tokenize,
    vision_encode,
)
from cityfm.neural.optim import grad_check, init_adam_state, optimizer_step

__all__ = [
    "ModelCheckpoint",
    "Vocabulary",
    "area_encode",
    "build_vocab",
    "fuse_visual",
    "grad_check",
    "init_adam_state",
    "init_params",
    "optimizer_step",
    "text_encode",
    "tokenize",
    "vision_encode",
]
