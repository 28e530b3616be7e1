import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from visualtts.errors import FormatError, ValidationError
from visualtts.tensorfile import (
    decode_tensor,
    encode_tensor,
    read_tensor,
    read_tensor_dir,
    write_tensor,
    write_tensor_dir,
)

finite_f32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


def test_single_zero_layout(tmp_path):
    path = tmp_path / "z.vtts"
    write_tensor(np.array([0.0]), path)
    raw = path.read_bytes()
    assert len(raw) == 16
    assert raw[:4] == b"VTTS"
    assert raw[4:8] == bytes([1, 0, 1, 0])
    assert raw[8:12] == (1).to_bytes(4, "little")
    assert raw[12:] == b"\x00\x00\x00\x00"


def test_rank2_one_by_one_has_two_dims():
    assert len(encode_tensor(np.zeros((1, 1)))) == 20


def test_random_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 80)).astype(np.float32)
    write_tensor(x, tmp_path / "x.vtts")
    y = read_tensor(tmp_path / "x.vtts")
    assert y.dtype == np.float32
    assert y.tobytes() == x.tobytes()


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, max_side=6), elements=finite_f32))
def test_round_trip_property(x):
    y = decode_tensor(encode_tensor(x))
    assert y.shape == x.shape
    assert y.tobytes() == x.tobytes()


def test_bad_magic():
    raw = bytearray(encode_tensor(np.ones(3)))
    raw[:4] = b"XTTS"
    with pytest.raises(FormatError, match="bad magic"):
        decode_tensor(bytes(raw))


def test_version_mismatch():
    raw = bytearray(encode_tensor(np.ones(3)))
    raw[4] = 2
    with pytest.raises(FormatError, match="version"):
        decode_tensor(bytes(raw))


def test_truncated_payload():
    raw = encode_tensor(np.ones((2, 3)))
    with pytest.raises(FormatError, match="truncated payload"):
        decode_tensor(raw[:-1])


def test_rank_and_finiteness_rejected():
    with pytest.raises(ValidationError):
        encode_tensor(np.zeros((1, 1, 1, 1, 1)))
    with pytest.raises(ValidationError):
        encode_tensor(np.array([np.nan]))


def test_tensor_dir_round_trip(tmp_path):
    tensors = {"a.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.float32(2.5) * np.ones(4)}
    write_tensor_dir(tensors, tmp_path)
    index = (tmp_path / "index.txt").read_text().splitlines()
    assert [line.split("\t")[0] for line in index] == ["a.weight", "b"]
    back = read_tensor_dir(tmp_path)
    assert set(back) == set(tensors)
    for k in tensors:
        assert back[k].tobytes() == np.asarray(tensors[k], dtype=np.float32).tobytes()


def test_tensor_dir_stores_rank5_with_shape_column(tmp_path):
    w = np.arange(2 * 3 * 2 * 2 * 2, dtype=np.float32).reshape(2, 3, 2, 2, 2)
    write_tensor_dir({"stem.weight": w}, tmp_path)
    line = (tmp_path / "index.txt").read_text().splitlines()[0]
    assert line.split("\t")[2] == "2,3,2,2,2"
    assert read_tensor(tmp_path / line.split("\t")[1]).shape == (6, 2, 2, 2)
    back = read_tensor_dir(tmp_path)["stem.weight"]
    assert back.shape == w.shape and np.array_equal(back, w)


def test_tensor_dir_bad_shape_column(tmp_path):
    write_tensor_dir({"x": np.zeros((2, 2), np.float32)}, tmp_path)
    (tmp_path / "index.txt").write_text("x\ttensors/0000.vtts\t3,3\n")
    with pytest.raises(FormatError):
        read_tensor_dir(tmp_path)
