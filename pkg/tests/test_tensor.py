import numpy as np
import pytest

from fistanet.errors import FormatError, ShapeError
from fistanet.rng import Rng
from fistanet.tensor import (
    read_tensor,
    tensor_axpy,
    tensor_dot,
    tensor_from_bytes,
    tensor_new,
    tensor_to_bytes,
    write_tensor,
)


def test_new_fill():
    t = tensor_new([2, 2], 0.0)
    assert t.shape == (2, 2)
    assert np.all(t == 0.0)
    assert tensor_new([1], 3.5)[0] == 3.5


def test_new_rejects_bad_dims():
    with pytest.raises(ShapeError):
        tensor_new([0])
    with pytest.raises(ShapeError):
        tensor_new([2, 2, 2, 2, 2])
    with pytest.raises(ShapeError):
        tensor_new([2 ** 20, 2 ** 10])  # exceeds the element cap


def test_axpy_basics():
    x = np.array([1.0, 1.0])
    y = np.array([2.0, 3.0])
    assert np.array_equal(tensor_axpy(0.0, np.array([9.0, 9.0]), np.array([1.0, 2.0])),
                          np.array([1.0, 2.0]))
    assert np.array_equal(tensor_axpy(1.0, x, y), np.array([3.0, 4.0]))
    assert np.array_equal(tensor_axpy(-1.0, y, y), np.zeros(2))


def test_axpy_linearity():
    rng = Rng(0)
    x = rng.normal(64)
    y = rng.normal(64)
    a, b = 0.7, -1.3
    lhs = tensor_axpy(a, x, tensor_axpy(b, x, y))
    rhs = tensor_axpy(a + b, x, y)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_axpy_shape_mismatch():
    with pytest.raises(ShapeError):
        tensor_axpy(1.0, np.zeros(3), np.zeros(4))


def test_dot_values():
    assert tensor_dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11.0
    assert tensor_dot(np.zeros(5), np.ones(5)) == 0.0
    with pytest.raises(ShapeError):
        tensor_dot(np.zeros(3), np.zeros((3, 1)))


def test_dot_small_magnitude_accumulation():
    n = 10 ** 6
    x = np.full(n, 1e-8)
    assert abs(tensor_dot(x, x) - 1e-10) <= 1e-22


def test_roundtrip_all_ranks(tmp_path):
    rng = Rng(2)
    for dims in [(7,), (3, 4), (3, 4, 5), (2, 3, 4, 5)]:
        t = rng.normal(dims)
        path = tmp_path / ("t%d.ftns" % len(dims))
        write_tensor(path, t)
        back = read_tensor(path)
        assert back.shape == t.shape
        assert np.array_equal(back, t)
        assert back.dtype == np.float64


def test_roundtrip_bytes_exact(tmp_path):
    t = Rng(4).normal((3, 4, 5))
    p1 = tmp_path / "a.ftns"
    p2 = tmp_path / "b.ftns"
    write_tensor(p1, t)
    write_tensor(p2, read_tensor(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_read_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.ftns"
    p.write_bytes(b"NOPE" + b"\x00" * 12)
    with pytest.raises(FormatError):
        read_tensor(p)


def test_read_rejects_empty(tmp_path):
    p = tmp_path / "empty.ftns"
    p.write_bytes(b"")
    with pytest.raises(FormatError):
        read_tensor(p)


def test_read_rejects_truncation(tmp_path):
    t = Rng(6).normal((4, 4))
    p = tmp_path / "t.ftns"
    write_tensor(p, t)
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_tensor(p)


def test_bytes_header_layout():
    t = np.arange(6, dtype=np.float64).reshape(2, 3)
    raw = tensor_to_bytes(t)
    assert raw[:4] == b"FTNS"
    assert raw[4] == 1  # version
    assert raw[5] == 1  # float64 code
    assert raw[6] == 2  # ndim
    assert raw[7] == 0  # reserved
    dims = np.frombuffer(raw[8:16], dtype="<u4")
    assert tuple(dims) == (2, 3)
    data = np.frombuffer(raw[16:], dtype="<f8")
    assert np.array_equal(data.reshape(2, 3), t)
    assert np.array_equal(tensor_from_bytes(raw), t)


def test_write_rejects_nonfinite(tmp_path):
    t = np.array([1.0, np.nan])
    with pytest.raises((ShapeError, FormatError)):
        write_tensor(tmp_path / "nan.ftns", t)
