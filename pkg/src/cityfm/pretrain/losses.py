"""Contrastive losses with closed-form gradients.

All functions return ``(loss, grads...)`` where gradients are taken with
respect to the embedding matrices passed in.
"""

from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


def _check_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {name}")


def context_embedding(member_ids: Sequence[int], embeddings: Mapping[int, np.ndarray]) -> np.ndarray:
    """Mean of member embeddings (the caller includes the empty node and excludes the anchor)."""
    if not member_ids:
        raise ValueError("context group has no members")
    missing = [m for m in member_ids if m not in embeddings]
    if missing:
        raise KeyError(f"missing embeddings for members {missing}")
    return np.mean([embeddings[m] for m in member_ids], axis=0)


def info_nce(queries: np.ndarray, keys: np.ndarray, tau: float) -> tuple[float, np.ndarray, np.ndarray]:
    """-(1/B) sum_i log softmax_j(q_i . k_j / tau)[i] and its gradients w.r.t. queries and keys."""
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    _check_finite("queries", queries)
    _check_finite("keys", keys)
    if queries.shape != keys.shape:
        raise ValueError(f"shape mismatch: {queries.shape} vs {keys.shape}")
    b = queries.shape[0]
    if b < 1:
        raise ValueError("empty batch")
    logits = queries @ keys.T / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    diag = np.arange(b)
    loss = float(np.mean(log_z - shifted[diag, diag]))
    probs = np.exp(shifted - log_z[:, None])
    dlogits = probs
    dlogits[diag, diag] -= 1.0
    dlogits /= b * tau
    return loss, dlogits @ keys, dlogits.T @ queries


def nce_text_loss(anchors: np.ndarray, contexts: np.ndarray, tau: float = 0.5):
    """Entity-vs-context loss; negatives are the other contexts in the batch."""
    return info_nce(anchors, contexts, tau)


def nce_vision_loss(text: np.ndarray, visual: np.ndarray, tau: float = 0.5):
    """Tag-text vs fused-visual loss over the polygons of a batch."""
    return info_nce(text, visual, tau)


def sample_road_negatives(n_roads: int, anchors: Sequence[int], sim_sets: Sequence[Sequence[int]], n_neg: int,
                          rng: np.random.Generator) -> list[np.ndarray]:
    """For each anchor, ``n_neg`` distinct roads outside its similar set and not itself (clamped)."""
    out = []
    clamped = False
    for a, sims in zip(anchors, sim_sets):
        mask = np.ones(n_roads, dtype=bool)
        mask[a] = False
        mask[list(sims)] = False
        pool = np.flatnonzero(mask)
        k = min(n_neg, len(pool))
        clamped |= k < n_neg
        out.append(np.sort(rng.choice(pool, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64))
    if clamped:
        log.warning("num_negatives=%d exceeds available negatives for some anchors; clamped", n_neg)
    return out


def nce_road_loss(roads: np.ndarray, anchors: Sequence[int], sim_sets: Sequence[Sequence[int]],
                  negatives: Sequence[np.ndarray], tau: float = 0.5) -> tuple[float, np.ndarray]:
    """Road-to-road loss over similar-link-weight positives and sampled negatives.

    ``roads`` holds every road embedding referenced by index. For anchor i
    and each positive j, the per-pair term is the softmax cross-entropy of the
    positive logit against itself plus the anchor's negatives. Anchors with no
    similar roads contribute 0 but still count in the 1/R average.
    Returns the loss and its gradient w.r.t. ``roads``.
    """
    roads = np.asarray(roads, dtype=np.float64)
    _check_finite("road embeddings", roads)
    grad = np.zeros_like(roads)
    r = len(anchors)
    if r == 0:
        return 0.0, grad
    total = 0.0
    for a, sims, negs in zip(anchors, sim_sets, negatives):
        sims = np.asarray(list(sims), dtype=np.int64)
        if len(sims) == 0:
            continue
        negs = np.asarray(negs, dtype=np.int64)
        s_a = roads[a]
        pos_logits = roads[sims] @ s_a / tau  # (P,)
        neg_logits = roads[negs] @ s_a / tau  # (N,)
        # one row per positive: [positive, negatives...]
        rows = np.concatenate([pos_logits[:, None], np.broadcast_to(neg_logits, (len(sims), len(negs)))], axis=1)
        m = rows.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(rows - m).sum(axis=1)) + m[:, 0]
        total += float(np.mean(log_z - pos_logits))
        probs = np.exp(rows - log_z[:, None])
        w = 1.0 / (r * len(sims) * tau)
        d_pos = (probs[:, 0] - 1.0) * w  # (P,)
        d_neg = probs[:, 1:].sum(axis=0) * w  # (N,)
        grad[a] += d_pos @ roads[sims] + d_neg @ roads[negs]
        np.add.at(grad, sims, d_pos[:, None] * s_a)
        np.add.at(grad, negs, d_neg[:, None] * s_a)
    return total / r, grad
