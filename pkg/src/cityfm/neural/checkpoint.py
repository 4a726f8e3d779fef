"""Versioned checkpoint container: named float64 tensors plus JSON metadata in one ``.npz``."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cityfm.config import TrainingConfig
from cityfm.neural.encoders import Vocabulary

FORMAT_VERSION = 1
_META_KEY = "__meta__"


@dataclass
class ModelCheckpoint:
    params: dict[str, np.ndarray]
    config: TrainingConfig
    vocab: Vocabulary
    max_area_m2: float | None = None
    road_ids: tuple[int, ...] = ()
    extra: dict = field(default_factory=dict)

    def road_offset(self, road_id: int) -> np.ndarray:
        try:
            return self.params["road.offsets"][self.road_ids.index(road_id)]
        except ValueError:
            return np.zeros(self.params["road.offsets"].shape[1])

    def to_bytes(self) -> bytes:
        meta = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "vocab": list(self.vocab.tokens),
            "max_area_m2": self.max_area_m2,
            "road_ids": list(self.road_ids),
            "extra": self.extra,
        }
        arrays = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in sorted(self.params.items())}
        arrays[_META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        try:
            with np.load(io.BytesIO(data), allow_pickle=False) as z:
                meta = json.loads(z[_META_KEY].tobytes().decode("utf-8"))
                params = {k: z[k].copy() for k in z.files if k != _META_KEY}
        except (zipfile.BadZipFile, KeyError, OSError, EOFError) as exc:
            raise ValueError(f"not a readable checkpoint: {exc}") from exc
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        return cls(
            params=params,
            config=TrainingConfig.from_dict(meta["config"]),
            vocab=Vocabulary(tuple(meta["vocab"])),
            max_area_m2=meta["max_area_m2"],
            road_ids=tuple(meta["road_ids"]),
            extra=meta.get("extra", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())
