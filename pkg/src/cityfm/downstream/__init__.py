"""Embedding export, linear probes, the synthetic benchmark city and similarity analysis."""

from cityfm.downstream.analysis import colocation_ranking, cosine_table, same_context_gap
from cityfm.downstream.embed import EmbeddingRecord, Embedder, RegionEmbedding, embed_entity, embed_region
from cityfm.downstream.probes import MetricReport, ProbeModel, evaluate_probe, fit_probe, run_probe
from cityfm.downstream.synth import GroundTruth, synth_city, write_city
from cityfm.downstream.tasks import eval_buildings, eval_regions, eval_speed

__all__ = [
    "EmbeddingRecord",
    "Embedder",
    "GroundTruth",
    "MetricReport",
    "ProbeModel",
    "RegionEmbedding",
    "colocation_ranking",
    "cosine_table",
    "embed_entity",
    "embed_region",
    "eval_buildings",
    "eval_regions",
    "eval_speed",
    "evaluate_probe",
    "fit_probe",
    "run_probe",
    "same_context_gap",
    "synth_city",
    "write_city",
]
