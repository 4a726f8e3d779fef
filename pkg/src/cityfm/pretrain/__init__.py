"""Contrastive objectives, link weights and the pre-training loop."""

from cityfm.pretrain.losses import (
    context_embedding,
    info_nce,
    nce_road_loss,
    nce_text_loss,
    nce_vision_loss,
    sample_road_negatives,
)
from cityfm.pretrain.roads import LinkWeightTable, link_weights, similar_roads
from cityfm.pretrain.trainer import TrainingResult, lr_schedule, pretrain, prepare, write_loss_curve

__all__ = [
    "LinkWeightTable",
    "TrainingResult",
    "context_embedding",
    "info_nce",
    "link_weights",
    "lr_schedule",
    "nce_road_loss",
    "nce_text_loss",
    "nce_vision_loss",
    "prepare",
    "pretrain",
    "sample_road_negatives",
    "similar_roads",
    "write_loss_curve",
]
