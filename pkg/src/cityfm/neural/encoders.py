"""Small trainable encoders with the same input/output contracts as the large backbones.

Parameters live in a flat ``dict[str, np.ndarray]``. The ``*_forward``
functions take a dict of :class:`Tensor` leaves and build a differentiable
graph; the ``*_encode`` functions are numpy conveniences for single inputs.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol

import numpy as np

from cityfm.corpus import Corpus, EMPTY_NODE_TAGS, serialize_tags
from cityfm.neural import autodiff as ad
from cityfm.neural.autodiff import Tensor

CONV_CHANNELS = (8, 16, 32, 64)
SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[UNK]")
CLS_ID, SEP_ID, UNK_ID = 0, 1, 2

_TOKEN_RE = re.compile(r"\[CLS\]|\[SEP\]|\w+|[^\w\s]")
_WORD_RE = re.compile(r"\w")


def tokenize(text: str) -> list[str]:
    return [t if t in SPECIAL_TOKENS else t.lower() for t in _TOKEN_RE.findall(text)]


def is_content(token: str) -> bool:
    """False for the markup every sequence shares: [CLS], [SEP] and punctuation."""
    return token not in SPECIAL_TOKENS and _WORD_RE.match(token) is not None


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, text: str) -> np.ndarray:
        """Ids of the content tokens; markup is dropped because mean pooling would only dilute it.

        A sequence with no content token encodes as ``[CLS]`` alone.
        """
        ids = [self.id(t) for t in tokenize(text) if is_content(t)]
        return np.array(ids or [CLS_ID], dtype=np.int64)

    def encode_tags(self, tags: Mapping[str, str]) -> np.ndarray:
        return self.encode(serialize_tags(tags))


def build_vocab(corpus: Corpus, min_freq: int = 2) -> Vocabulary:
    """Tokens seen at least ``min_freq`` times, by descending frequency then alphabetically."""
    counts: Counter[str] = Counter()
    n_tagged = 0
    for e in corpus.entities.values():
        if e.tags:
            n_tagged += 1
            counts.update(t for t in tokenize(serialize_tags(e)) if is_content(t))
    if n_tagged == 0:
        raise ValueError("cannot build a vocabulary from a corpus without tagged entities")
    # the empty-node tokens are always representable
    always = {t for t in tokenize(serialize_tags(EMPTY_NODE_TAGS)) if is_content(t)}
    kept = [t for t, c in counts.items() if c >= min_freq or t in always]
    kept += [t for t in always if t not in counts]
    kept.sort(key=lambda t: (-counts.get(t, 0), t))
    return Vocabulary(SPECIAL_TOKENS + tuple(kept))


# ------------------------------------------------------------------- parameters


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _mlp_params(rng, prefix: str, d_in: int, d_hidden: int, d_out: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.w1": _uniform(rng, (d_in, d_hidden), d_in),
        f"{prefix}.b1": _uniform(rng, (d_hidden,), d_in),
        f"{prefix}.w2": _uniform(rng, (d_hidden, d_out), d_hidden),
        f"{prefix}.b2": _uniform(rng, (d_out,), d_hidden),
    }


def init_params(vocab_size: int, embed_dim: int = 128, token_dim: int = 64, n_roads: int = 0,
                seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {"text.embed": _uniform(rng, (vocab_size, token_dim), 1)}
    p.update(_mlp_params(rng, "text.mlp", token_dim, embed_dim, embed_dim))
    c_in = 1
    for i, c_out in enumerate(CONV_CHANNELS, start=1):
        fan_in = c_in * 9
        p[f"vision.conv{i}.w"] = _uniform(rng, (c_out, c_in, 3, 3), fan_in)
        p[f"vision.conv{i}.b"] = _uniform(rng, (c_out,), fan_in)
        c_in = c_out
    p["vision.dense.w"] = _uniform(rng, (c_in, embed_dim), c_in)
    p["vision.dense.b"] = _uniform(rng, (embed_dim,), c_in)
    p.update(_mlp_params(rng, "vision.mlp", embed_dim, embed_dim, embed_dim))
    p.update(_mlp_params(rng, "area.mlp", 1, embed_dim, embed_dim))
    p.update(_mlp_params(rng, "fuse.mlp", embed_dim, embed_dim, embed_dim))
    p["road.offsets"] = np.zeros((n_roads, embed_dim))
    return p


def as_leaves(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}


def leaf_grads(leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}


# ---------------------------------------------------------------------- forwards


def mlp2(P: Mapping[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    hidden = ad.tanh(x @ P[f"{prefix}.w1"] + P[f"{prefix}.b1"])
    return hidden @ P[f"{prefix}.w2"] + P[f"{prefix}.b2"]


def pack_sequences(seqs: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    seqs = list(seqs)
    lengths = [len(s) for s in seqs]
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    ids = np.concatenate(seqs).astype(np.int64) if seqs else np.zeros(0, dtype=np.int64)
    return ids, offsets


def text_forward(P: Mapping[str, Tensor], seqs: Iterable[np.ndarray]) -> Tensor:
    """MLP(mean of token embeddings) for each sequence -> (n, D)."""
    ids, offsets = pack_sequences(seqs)
    vocab = P["text.embed"].shape[0]
    if len(ids) and (ids.min() < 0 or ids.max() >= vocab):
        raise ValueError(f"token id out of range for vocabulary of size {vocab}")
    pooled = ad.embedding_bag(P["text.embed"], ids, offsets)
    return mlp2(P, "text.mlp", pooled)


def vision_features(P: Mapping[str, Tensor], grids: np.ndarray) -> Tensor:
    """Four stride-2 conv blocks, global average pool, dense to D (pre-projection)."""
    x = Tensor(np.asarray(grids, dtype=np.float64)[:, None, :, :])
    for i in range(1, len(CONV_CHANNELS) + 1):
        x = ad.tanh(ad.conv2d(x, P[f"vision.conv{i}.w"], P[f"vision.conv{i}.b"]))
    pooled = ad.mean(x, axis=(2, 3))
    return pooled @ P["vision.dense.w"] + P["vision.dense.b"]


def vision_forward(P: Mapping[str, Tensor], grids: np.ndarray) -> Tensor:
    return mlp2(P, "vision.mlp", vision_features(P, grids))


def area_forward(P: Mapping[str, Tensor], ratios: np.ndarray) -> Tensor:
    x = Tensor(np.asarray(ratios, dtype=np.float64).reshape(-1, 1))
    return mlp2(P, "area.mlp", x)


def fuse_forward(P: Mapping[str, Tensor], s: Tensor, a: Tensor) -> Tensor:
    if s.shape != a.shape:
        raise ValueError(f"dimension mismatch: {s.shape} vs {a.shape}")
    return mlp2(P, "fuse.mlp", (s + a) * 0.5)


def visual_forward(P: Mapping[str, Tensor], grids: np.ndarray, area_ratios: np.ndarray) -> Tensor:
    return fuse_forward(P, vision_forward(P, grids), area_forward(P, area_ratios))


# ----------------------------------------------------------- numpy conveniences


def _consts(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def text_encode(params: Mapping[str, np.ndarray], tokens: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        raise ValueError("empty token sequence")
    return text_forward(_consts(params), [tokens]).data[0]


def text_encode_batch(params: Mapping[str, np.ndarray], seqs: list[np.ndarray]) -> np.ndarray:
    if not seqs:
        return np.zeros((0, params["text.mlp.w2"].shape[1]))
    return text_forward(_consts(params), seqs).data


def check_grid(params: Mapping[str, np.ndarray], grids: np.ndarray, grid_size: int) -> np.ndarray:
    grids = np.asarray(grids)
    if grids.ndim == 2:
        grids = grids[None]
    if grids.shape[1:] != (grid_size, grid_size):
        raise ValueError(f"expected {grid_size}x{grid_size} grids, got {grids.shape[1:]}")
    return grids


def vision_encode(params: Mapping[str, np.ndarray], grid, grid_size: int | None = None) -> np.ndarray:
    bits = grid.bits if hasattr(grid, "bits") else np.asarray(grid)
    grid_size = grid_size or bits.shape[-1]
    return vision_forward(_consts(params), check_grid(params, bits, grid_size)).data[0]


def area_encode(params: Mapping[str, np.ndarray], area_m2: float, max_a: float) -> np.ndarray:
    if not max_a > 0:
        raise ValueError(f"max_a must be > 0, got {max_a}")
    return area_forward(_consts(params), np.array([area_m2 / max_a])).data[0]


def fuse_visual(params: Mapping[str, np.ndarray], s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return fuse_forward(_consts(params), Tensor(np.atleast_2d(s)), Tensor(np.atleast_2d(a))).data[0]


def visual_encode_batch(params: Mapping[str, np.ndarray], grids: np.ndarray, area_ratios: np.ndarray,
                        chunk: int = 256) -> np.ndarray:
    P = _consts(params)
    out = [visual_forward(P, grids[i:i + chunk], area_ratios[i:i + chunk]).data for i in range(0, len(grids), chunk)]
    return np.concatenate(out) if out else np.zeros((0, params["fuse.mlp.w2"].shape[1]))


class TextEncoder(Protocol):
    """Interface a heavier language backbone would implement."""

    def __call__(self, params: Mapping[str, Tensor], seqs: Iterable[np.ndarray]) -> Tensor: ...


class VisionEncoder(Protocol):
    """Interface a heavier vision backbone would implement."""

    def __call__(self, params: Mapping[str, Tensor], grids: np.ndarray) -> Tensor: ...
