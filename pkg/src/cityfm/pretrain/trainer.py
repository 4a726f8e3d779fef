"""Joint pre-training on the text, vision-language and road objectives."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from cityfm.config import TrainingConfig
from cityfm.corpus import Corpus, EMPTY_NODE_TAGS
from cityfm.geometry import ContextGroup, GeometryError, build_context_groups, rasterize, surface_area_m2
from cityfm.neural import autodiff as ad
from cityfm.neural.autodiff import Tensor
from cityfm.neural.checkpoint import ModelCheckpoint
from cityfm.neural.encoders import (
    Vocabulary,
    as_leaves,
    build_vocab,
    init_params,
    leaf_grads,
    text_forward,
    visual_forward,
)
from cityfm.neural.optim import init_adam_state, optimizer_step
from cityfm.pretrain.losses import nce_road_loss, nce_text_loss, nce_vision_loss, sample_road_negatives
from cityfm.pretrain.roads import link_weights, similar_roads

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "lr", "loss_T", "loss_V", "loss_R", "loss_total")


class TrainingDataError(ValueError):
    pass


def lr_schedule(step: int, max_steps: int, warmup_fraction: float, base_lr: float) -> float:
    """Linear warm-up from 0 to ``base_lr``, then linear decay to 0 at ``max_steps``."""
    if not 0 <= warmup_fraction < 1:
        raise ValueError(f"warmup_fraction must be in [0, 1), got {warmup_fraction}")
    if not 0 <= step <= max_steps:
        raise ValueError(f"step {step} outside [0, {max_steps}]")
    warmup = int(round(warmup_fraction * max_steps))
    if step < warmup:
        return base_lr * step / warmup
    if max_steps == warmup:
        return base_lr
    return base_lr * (max_steps - step) / (max_steps - warmup)


class SequenceTable:
    """Deduplicated token sequences; entities with equal tags share one row."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.seqs: list[np.ndarray] = []
        self._index: dict[tuple, int] = {}
        self.empty = self.add(EMPTY_NODE_TAGS)

    def add(self, tags) -> int:
        ids = self.vocab.encode_tags(tags)
        key = tuple(ids)
        if key not in self._index:
            self._index[key] = len(self.seqs)
            self.seqs.append(ids)
        return self._index[key]


@dataclass
class TrainingData:
    vocab: Vocabulary
    seqs: SequenceTable
    groups: list[ContextGroup]
    text_groups: list[tuple[int, ...]]  # member seq rows of groups with at least one member
    polygon_ids: np.ndarray
    polygon_seq: np.ndarray
    grids: np.ndarray
    area_ratios: np.ndarray
    max_area_m2: float | None
    road_ids: tuple[int, ...]
    road_members: list[tuple[int, ...]]  # seq rows incl. the empty node
    road_sims: list[np.ndarray]
    has_relations: bool
    warnings: list[str] = field(default_factory=list)

    @property
    def active(self) -> dict[str, bool]:
        return {
            "text": len(self.text_groups) > 0,
            "vision": len(self.polygon_ids) > 0 and self.max_area_m2 is not None,
            "road": self.has_relations and len(self.road_ids) > 1,
        }


def _raster_or_none(args):
    ring, grid_size = args
    try:
        return rasterize(ring, grid_size).bits
    except GeometryError:
        return None


def prepare(corpus: Corpus, config: TrainingConfig, threads: int = 1) -> TrainingData:
    vocab = build_vocab(corpus)
    seqs = SequenceTable(vocab)
    groups = build_context_groups(corpus, config.context_radius_m)
    member_seq = {}
    for g in groups:
        for m in g.member_ids:
            member_seq[m] = seqs.add(corpus[m].tags)
    text_groups = [tuple(member_seq[m] for m in g.member_ids) for g in groups if g.member_ids]

    tagged_polys = [w for w in corpus.polygons() if w.tags]
    jobs = [(corpus.coords(w), config.grid_size) for w in tagged_polys]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rasters = list(pool.map(_raster_or_none, jobs))
    else:
        rasters = [_raster_or_none(j) for j in jobs]
    keep = [i for i, r in enumerate(rasters) if r is not None]
    max_a = corpus.manifest.max_area_m2
    polys = [tagged_polys[i] for i in keep]
    grids = np.stack([rasters[i] for i in keep]).astype(np.float64) if keep else np.zeros((0, config.grid_size, config.grid_size))
    ratios = np.array([surface_area_m2(corpus.coords(w)) / max_a for w in polys]) if polys and max_a else np.zeros(0)

    table = link_weights(corpus)
    sims = similar_roads(table, config.theta)
    road_ids = tuple(sorted(table.road_ids))
    pos = {r: k for k, r in enumerate(road_ids)}
    by_segment = {g.segment_id: g for g in groups}
    road_members = [tuple(member_seq[m] for m in by_segment[r].member_ids) + (seqs.empty,) for r in road_ids]
    road_sims = [np.array(sorted(pos[j] for j in sims[r]), dtype=np.int64) for r in road_ids]

    data = TrainingData(
        vocab=vocab, seqs=seqs, groups=groups, text_groups=text_groups,
        polygon_ids=np.array([w.id for w in polys], dtype=np.int64),
        polygon_seq=np.array([seqs.add(w.tags) for w in polys], dtype=np.int64),
        grids=grids, area_ratios=ratios, max_area_m2=max_a,
        road_ids=road_ids, road_members=road_members, road_sims=road_sims,
        has_relations=table.has_relations,
    )
    active = data.active
    if not any(active.values()):
        raise TrainingDataError(
            "corpus supports none of the objectives: missing "
            "tagged entities near roads (text), tagged polygons (vision), relations over roads (road)"
        )
    for name, why in (("text", "no tagged entities assigned to a road"),
                      ("vision", "no tagged polygons"),
                      ("road", "no relations containing roads")):
        if not active[name]:
            msg = f"{name} objective disabled: {why}"
            data.warnings.append(msg)
            log.warning(msg)
    return data


@dataclass
class StepBatch:
    text_anchor: np.ndarray  # (B,) seq rows
    text_context: list[tuple[int, ...]]  # seq rows averaged per anchor
    poly: np.ndarray  # indices into data.polygon_ids
    road_anchor: np.ndarray  # road indices
    road_negatives: list[np.ndarray]


def sample_batch(data: TrainingData, config: TrainingConfig, rng: np.random.Generator) -> StepBatch:
    active = data.active
    b = config.batch_size
    anchors, contexts = [], []
    if active["text"]:
        chosen = rng.choice(len(data.text_groups), size=min(b, len(data.text_groups)), replace=False)
        for gi in chosen:
            members = data.text_groups[gi]
            k = int(rng.integers(len(members)))
            anchors.append(members[k])
            contexts.append(members[:k] + members[k + 1:] + (data.seqs.empty,))
    poly = np.zeros(0, dtype=np.int64)
    if active["vision"]:
        poly = rng.choice(len(data.polygon_ids), size=min(b, len(data.polygon_ids)), replace=False)
    road_anchor, negs = np.zeros(0, dtype=np.int64), []
    if active["road"]:
        n = len(data.road_ids)
        road_anchor = rng.choice(n, size=min(b, n), replace=False)
        negs = sample_road_negatives(n, road_anchor, [data.road_sims[a] for a in road_anchor],
                                     config.num_negatives, rng)
    return StepBatch(np.array(anchors, dtype=np.int64), contexts, poly, road_anchor, negs)


def _averaging(rows: list[tuple[int, ...]], columns: dict[int, int]) -> np.ndarray:
    out = np.zeros((len(rows), len(columns)))
    for i, members in enumerate(rows):
        for m in members:
            out[i, columns[m]] += 1.0 / len(members)
    return out


def step_losses(params: dict[str, np.ndarray], data: TrainingData, batch: StepBatch, config: TrainingConfig,
                with_grads: bool = True) -> tuple[dict[str, float], dict[str, np.ndarray] | None]:
    """Forward the three objectives on one batch; returns per-objective losses and parameter gradients."""
    tau = config.tau
    leaves = as_leaves(params)
    needed: set[int] = set(batch.text_anchor.tolist())
    for ctx in batch.text_context:
        needed.update(ctx)
    needed.update(data.polygon_seq[batch.poly].tolist())
    road_rows: list[int] = []
    if len(batch.road_anchor):
        involved = set(batch.road_anchor.tolist())
        for a, negs in zip(batch.road_anchor, batch.road_negatives):
            involved.update(data.road_sims[a].tolist())
            involved.update(negs.tolist())
        road_rows = sorted(involved)
        for r in road_rows:
            needed.update(data.road_members[r])
    order = sorted(needed)
    columns = {s: i for i, s in enumerate(order)}
    H = text_forward(leaves, [data.seqs.seqs[s] for s in order]) if order else None

    losses = {"loss_T": 0.0, "loss_V": 0.0, "loss_R": 0.0}
    terms: list[Tensor] = []
    if len(batch.text_anchor):
        ha = ad.gather_rows(H, [columns[s] for s in batch.text_anchor])
        c = ad.matmul(Tensor(_averaging(batch.text_context, columns)), H)
        value, g_h, g_c = nce_text_loss(ha.data, c.data, tau)
        losses["loss_T"] = value
        terms.append(ad.custom(value, (ha, c), (g_h, g_c)))
    if len(batch.poly):
        hp = ad.gather_rows(H, [columns[s] for s in data.polygon_seq[batch.poly]])
        v = visual_forward(leaves, data.grids[batch.poly], data.area_ratios[batch.poly])
        value, g_h, g_v = nce_vision_loss(hp.data, v.data, tau)
        losses["loss_V"] = value
        terms.append(ad.custom(value, (hp, v), (g_h, g_v)))
    if road_rows:
        local = {r: i for i, r in enumerate(road_rows)}
        # the context only seeds the road embedding; the road loss trains the offsets, not the text encoder
        ctx = Tensor(_averaging([data.road_members[r] for r in road_rows], columns) @ H.data)
        s = ctx + ad.gather_rows(leaves["road.offsets"], road_rows)
        anchors = [local[a] for a in batch.road_anchor]
        sims = [[local[j] for j in data.road_sims[a]] for a in batch.road_anchor]
        negs = [np.array([local[j] for j in n], dtype=np.int64) for n in batch.road_negatives]
        value, g_s = nce_road_loss(s.data, anchors, sims, negs, tau)
        losses["loss_R"] = value
        terms.append(ad.custom(value, (s,), (g_s,)))
    losses["loss_total"] = losses["loss_T"] + losses["loss_V"] + losses["loss_R"]
    if not with_grads or not terms:
        return losses, None
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    total.backward()
    return losses, leaf_grads(leaves)


@dataclass
class TrainingResult:
    checkpoint: ModelCheckpoint
    curve: list[dict]
    stopped_early: bool
    seconds: float


def pretrain(corpus: Corpus, config: TrainingConfig, threads: int = 1,
             progress: Callable[[dict], None] | None = None, data: TrainingData | None = None) -> TrainingResult:
    """Minimize the summed objectives with Adam and a warm-up/linear-decay schedule."""
    t0 = time.perf_counter()
    data = data or prepare(corpus, config, threads)
    params = init_params(len(data.vocab), config.embed_dim, config.token_dim, len(data.road_ids), config.seed)
    state = init_adam_state(params)
    rng = np.random.default_rng(config.seed)
    curve: list[dict] = []
    totals: list[float] = []
    stopped_early = False
    w = config.plateau_window
    for step in range(config.max_steps):
        lr = lr_schedule(step, config.max_steps, config.warmup_fraction, config.lr)
        batch = sample_batch(data, config, rng)
        losses, grads = step_losses(params, data, batch, config)
        params, state = optimizer_step(params, grads, state, lr)
        row = {"step": step, "lr": lr, **losses}
        curve.append(row)
        totals.append(losses["loss_total"])
        if progress is not None:
            progress(row)
        if w > 0 and len(totals) >= 2 * w:
            prev = float(np.mean(totals[-2 * w:-w]))
            now = float(np.mean(totals[-w:]))
            if prev != 0 and (prev - now) / abs(prev) < config.plateau_tol:
                stopped_early = True
                log.info("loss plateau at step %d (moving average %.5f -> %.5f)", step, prev, now)
                break
    ckpt = ModelCheckpoint(
        params=params, config=config, vocab=data.vocab, max_area_m2=data.max_area_m2,
        road_ids=data.road_ids, extra={"steps_run": len(curve), "stopped_early": stopped_early},
    )
    return TrainingResult(ckpt, curve, stopped_early, time.perf_counter() - t0)


def write_loss_curve(curve: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in curve:
            writer.writerow([row["step"]] + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]])
