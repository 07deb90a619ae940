import numpy as np
import pytest

from afalab.checkpoint import (CheckpointError, file_sha256, load_checkpoint,
                               save_checkpoint)


def test_round_trip(tmp_path):
    path = str(tmp_path / "model.ckpt")
    arrays = {
        "w": np.arange(12, dtype=np.float32).reshape(3, 4),
        "b": np.array([1.5, -2.5]),
        "n": np.array(7, dtype=np.int64),
    }
    save_checkpoint(path, "demo", arrays, {"hidden": [3, 4]})
    kind, back, meta = load_checkpoint(path)
    assert kind == "demo"
    assert meta == {"hidden": [3, 4]}
    for name, arr in arrays.items():
        assert back[name].dtype == arr.dtype
        assert np.array_equal(back[name], arr)


def test_save_is_byte_deterministic(tmp_path):
    a = str(tmp_path / "a.ckpt")
    b = str(tmp_path / "b.ckpt")
    arrays = {"x": np.linspace(0, 1, 17)}
    save_checkpoint(a, "demo", arrays, {"seed": 3})
    save_checkpoint(b, "demo", arrays, {"seed": 3})
    assert file_sha256(a) == file_sha256(b)


def test_truncated_file_rejected(tmp_path):
    path = str(tmp_path / "t.ckpt")
    save_checkpoint(path, "demo", {"x": np.zeros(100)}, {})
    data = open(path, "rb").read()
    open(path, "wb").write(data[:-40])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_wrong_magic_rejected(tmp_path):
    path = str(tmp_path / "bad.ckpt")
    open(path, "wb").write(b"not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_kind_mismatch_detectable(tmp_path):
    path = str(tmp_path / "k.ckpt")
    save_checkpoint(path, "score", {"x": np.zeros(2)}, {})
    kind, _, _ = load_checkpoint(path)
    assert kind == "score"
