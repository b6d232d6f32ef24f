"""Container format and deterministic archive tests."""

import struct

import numpy as np
import pytest

from ladbnet import serialize
from ladbnet.errors import FormatError


def _sample_tensors():
    rng = np.random.default_rng(0)
    return {
        "a.w": rng.normal(size=(4, 3)).astype(np.float32),
        "a.b": np.arange(3, dtype=np.float32),
        "q": rng.integers(-128, 128, size=(5,), dtype=np.int8),
        "bias32": np.array([1, -2, 3], dtype=np.int32),
    }


def test_roundtrip_preserves_meta_and_tensors(tmp_path):
    path = tmp_path / "m.ladb"
    meta = {"kind": "model", "config": {"x": 1, "name": "full"}}
    tensors = _sample_tensors()
    serialize.write_container(path, meta, tensors)
    meta2, tensors2 = serialize.read_container(path)
    assert meta2["kind"] == "model" and meta2["config"] == meta["config"]
    assert list(tensors2) == list(tensors)
    for name in tensors:
        assert tensors2[name].dtype == tensors[name].dtype
        assert np.array_equal(tensors2[name], tensors[name])


def test_write_is_byte_deterministic(tmp_path):
    p1, p2 = tmp_path / "a.ladb", tmp_path / "b.ladb"
    # same logical metadata, different key insertion order
    serialize.write_container(p1, {"b": 2, "a": 1}, _sample_tensors())
    serialize.write_container(p2, {"a": 1, "b": 2}, _sample_tensors())
    assert p1.read_bytes() == p2.read_bytes()


def test_header_layout(tmp_path):
    path = tmp_path / "m.ladb"
    serialize.write_container(path, {}, {"t": np.zeros(2, np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"LADB"
    assert struct.unpack_from("<I", raw, 4)[0] == 1
    meta_len = struct.unpack_from("<Q", raw, 8)[0]
    assert len(raw) == 16 + meta_len + 8  # two float32 payload bytes at the end


def test_corrupted_magic_rejected(tmp_path):
    path = tmp_path / "m.ladb"
    serialize.write_container(path, {}, {"t": np.zeros(2, np.float32)})
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        serialize.read_container(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "m.ladb"
    serialize.write_container(path, {}, {"t": np.zeros(2, np.float32)})
    raw = bytearray(path.read_bytes())
    struct.pack_into("<I", raw, 4, 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        serialize.read_container(path)


def test_truncated_payload_names_tensor(tmp_path):
    path = tmp_path / "m.ladb"
    serialize.write_container(path, {}, {"a": np.zeros(2, np.float32), "late": np.zeros(4, np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-6])
    with pytest.raises(FormatError, match="late"):
        serialize.read_container(path)


def test_truncated_metadata_rejected(tmp_path):
    path = tmp_path / "m.ladb"
    serialize.write_container(path, {}, {"a": np.zeros(2, np.float32)})
    raw = path.read_bytes()
    path.write_bytes(raw[:18])
    with pytest.raises(FormatError, match="metadata"):
        serialize.read_container(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "m.ladb"
    serialize.write_container(path, {}, {"a": np.zeros(2, np.float32)})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(FormatError, match="trailing"):
        serialize.read_container(path)


def test_npz_writer_is_deterministic_and_loadable(tmp_path):
    arrays = {"x": np.arange(6, dtype=np.float32).reshape(2, 3), "names": np.array([1, 2, 3])}
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    serialize.save_npz_deterministic(p1, arrays)
    serialize.save_npz_deterministic(p2, arrays)
    assert p1.read_bytes() == p2.read_bytes()
    back = serialize.load_npz(p1)
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])
