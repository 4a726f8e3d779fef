import io
import json

import numpy as np
import pytest

from cityfm.config import TrainingConfig
from cityfm.neural.checkpoint import ModelCheckpoint
from cityfm.neural.encoders import SPECIAL_TOKENS, Vocabulary, init_params


@pytest.fixture
def checkpoint():
    params = init_params(5, embed_dim=4, token_dim=3, n_roads=2, seed=1)
    params["road.offsets"] = np.array([[1.0, 2, 3, 4], [5, 6, 7, 8]])
    return ModelCheckpoint(params, TrainingConfig(tau=0.25, seed=4), Vocabulary(SPECIAL_TOKENS + ("a", "b")),
                           max_area_m2=1234.5, road_ids=(70, 90), extra={"steps_run": 3})


def test_round_trip(tmp_path, checkpoint):
    path = tmp_path / "model.npz"
    checkpoint.save(path)
    back = ModelCheckpoint.load(path)
    assert back.config == checkpoint.config
    assert back.vocab == checkpoint.vocab
    assert (back.max_area_m2, back.road_ids, back.extra) == (1234.5, (70, 90), {"steps_run": 3})
    assert back.params.keys() == checkpoint.params.keys()
    for k, v in checkpoint.params.items():
        assert np.array_equal(back.params[k], v)
    assert back.to_bytes() == checkpoint.to_bytes()


def test_bytes_are_reproducible(checkpoint):
    assert checkpoint.to_bytes() == checkpoint.to_bytes()


def test_road_offset_lookup(checkpoint):
    np.testing.assert_array_equal(checkpoint.road_offset(90), [5, 6, 7, 8])
    np.testing.assert_array_equal(checkpoint.road_offset(1), np.zeros(4))


def test_version_check(checkpoint):
    meta = json.loads(np.load(io.BytesIO(checkpoint.to_bytes()))["__meta__"].tobytes())
    meta["format_version"] = 9
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))
    with pytest.raises(ValueError, match="unsupported checkpoint version"):
        ModelCheckpoint.from_bytes(buf.getvalue())


def test_corrupt_bytes(checkpoint):
    data = bytearray(checkpoint.to_bytes())
    data[len(data) // 2] ^= 0xFF
    with pytest.raises(ValueError):
        ModelCheckpoint.from_bytes(bytes(data))
    with pytest.raises(ValueError):
        ModelCheckpoint.from_bytes(b"not a zip")
