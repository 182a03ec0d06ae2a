"""Dense float64 tensors and the FTNS file format.

Tensors are plain numpy float64 arrays (1 to 4 axes).  This module adds the
shape/finiteness checks the rest of the package relies on and a small
little-endian binary format for bit-exact persistence:

    bytes 0-3   magic "FTNS"
    byte  4     version, currently 1
    byte  5     dtype code, 1 = IEEE-754 binary64
    byte  6     ndim, 1..4
    byte  7     reserved, 0
    then ndim x uint32 dims, then row-major float64 data

Scalars are stored with dims [1].
"""

import struct

import numpy as np

from .errors import FormatError, ShapeError

MAX_ELEMENTS = 2 ** 28
MAX_NDIM = 4

_MAGIC = b"FTNS"
_VERSION = 1
_DTYPE_F64 = 1


def tensor_new(dims, fill=0.0):
    """New tensor of shape `dims`, every element equal to `fill`."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 1 or len(dims) > MAX_NDIM:
        raise ShapeError("tensor must have 1..%d axes, got %d" % (MAX_NDIM, len(dims)))
    if any(d < 1 for d in dims):
        raise ShapeError("tensor dims must be >= 1, got %r" % (dims,))
    n = 1
    for d in dims:
        n *= d
    if n > MAX_ELEMENTS:
        raise ShapeError("tensor of %d elements exceeds the %d cap" % (n, MAX_ELEMENTS))
    return np.full(dims, float(fill), dtype=np.float64)


def check_same_shape(x, y):
    if x.shape != y.shape:
        raise ShapeError("shape mismatch: %r vs %r" % (x.shape, y.shape))


def tensor_axpy(alpha, x, y):
    """alpha*x + y, element-wise, same shapes."""
    check_same_shape(x, y)
    return float(alpha) * x + y


def tensor_dot(x, y):
    """Sum of element-wise products.

    Uses numpy's pairwise summation (np.sum) rather than BLAS dot: the
    accumulated rounding stays within a few ulps of the result, which the
    tests rely on for tiny-magnitude inputs.
    """
    check_same_shape(x, y)
    return float(np.sum(x * y))


def write_tensor(path, t):
    """Write `t` in FTNS format (bit-exact round trip with read_tensor)."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.ndim > MAX_NDIM:
        raise ShapeError("cannot store tensors with more than %d axes" % MAX_NDIM)
    if not np.isfinite(t).all():
        raise FormatError("refusing to store non-finite values")
    header = _MAGIC + struct.pack("<BBBB", _VERSION, _DTYPE_F64, t.ndim, 0)
    dims = struct.pack("<%dI" % t.ndim, *t.shape)
    data = np.ascontiguousarray(t, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(data)


def read_tensor(path):
    """Read an FTNS file back into a float64 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return tensor_from_bytes(raw, str(path))


def tensor_from_bytes(raw, label="<bytes>"):
    """Decode one FTNS blob; used by read_tensor and the checkpoint format."""
    if len(raw) < 8:
        raise FormatError("%s: truncated FTNS header" % label)
    if raw[:4] != _MAGIC:
        raise FormatError("%s: bad magic %r" % (label, raw[:4]))
    version, dtype, ndim, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != _VERSION:
        raise FormatError("%s: unsupported version %d" % (label, version))
    if dtype != _DTYPE_F64:
        raise FormatError("%s: unsupported dtype code %d" % (label, dtype))
    if not 1 <= ndim <= MAX_NDIM:
        raise FormatError("%s: bad ndim %d" % (label, ndim))
    if reserved != 0:
        raise FormatError("%s: reserved byte is %d, expected 0" % (label, reserved))
    need = 8 + 4 * ndim
    if len(raw) < need:
        raise FormatError("%s: truncated dims" % label)
    dims = struct.unpack("<%dI" % ndim, raw[8:need])
    if any(d < 1 for d in dims):
        raise FormatError("%s: zero dim in %r" % (label, dims))
    n = 1
    for d in dims:
        n *= d
    if len(raw) != need + 8 * n:
        raise FormatError(
            "%s: payload is %d bytes, expected %d" % (label, len(raw) - need, 8 * n)
        )
    data = np.frombuffer(raw[need:], dtype="<f8").astype(np.float64)
    return data.reshape(dims)


def tensor_to_bytes(t):
    """Encode as one FTNS blob (same layout write_tensor puts on disk)."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        t = t.reshape(1)
    header = _MAGIC + struct.pack("<BBBB", _VERSION, _DTYPE_F64, t.ndim, 0)
    dims = struct.pack("<%dI" % t.ndim, *t.shape)
    return header + dims + np.ascontiguousarray(t, dtype="<f8").tobytes()
