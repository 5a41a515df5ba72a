"""Little-endian binary helpers shared by the tensor, cache, dataset and
checkpoint file formats."""

import struct

import numpy as np

from .errors import FormatError

TENSOR_MAGIC = b"FPT1"


def write_u32(fh, value):
    fh.write(struct.pack("<I", int(value)))


def write_u8(fh, value):
    fh.write(struct.pack("<B", int(value)))


def read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected end of file: wanted {n} bytes, got {len(buf)}")
    return buf


def read_u32(fh):
    return struct.unpack("<I", read_exact(fh, 4))[0]


def read_u8(fh):
    return struct.unpack("<B", read_exact(fh, 1))[0]


def write_shape(fh, shape):
    write_u32(fh, len(shape))
    for dim in shape:
        write_u32(fh, dim)


def read_shape(fh):
    rank = read_u32(fh)
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}")
    return tuple(read_u32(fh) for _ in range(rank))


def write_f64(fh, array):
    fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_f64(fh, shape):
    count = int(np.prod(shape, dtype=np.int64))
    raw = read_exact(fh, 8 * count)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def write_tensor(fh, array):
    """Tensor record: magic, u32 rank, u32 per dimension, raw float64 data."""
    array = np.asarray(array, dtype=np.float64)
    fh.write(TENSOR_MAGIC)
    write_shape(fh, array.shape)
    write_f64(fh, array)


def read_tensor(fh):
    magic = read_exact(fh, 4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    shape = read_shape(fh)
    return read_f64(fh, shape)


def write_text_block(fh, text):
    raw = text.encode("utf-8")
    write_u32(fh, len(raw))
    fh.write(raw)


def read_text_block(fh):
    n = read_u32(fh)
    return read_exact(fh, n).decode("utf-8")
