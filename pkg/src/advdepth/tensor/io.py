"""Binary tensor dumps.

Layout (little endian): ``b"DHTN"``, u32 rank, ``rank`` x u64 extents, then
the float64 payload in C order.
"""
import struct

import numpy as np

from ..errors import FormatError

MAGIC = b"DHTN"


def dumps_tensor(arr):
    arr = np.array(arr, dtype="<f8", order="C")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def read_tensor(buf, offset=0):
    """Parse one dump starting at ``offset``; returns ``(array, next_offset)``."""
    end = offset + 8
    if len(buf) < end or buf[offset:offset + 4] != MAGIC:
        raise FormatError("bad tensor magic")
    (rank,) = struct.unpack_from("<I", buf, offset + 4)
    if rank > 16:
        raise FormatError(f"implausible tensor rank {rank}")
    if len(buf) < end + 8 * rank:
        raise FormatError("truncated tensor header")
    shape = struct.unpack_from(f"<{rank}Q", buf, end)
    end += 8 * rank
    nbytes = 8 * int(np.prod(shape, dtype=np.int64))
    if len(buf) < end + nbytes:
        raise FormatError("truncated tensor payload")
    arr = np.frombuffer(buf, dtype="<f8", count=nbytes // 8, offset=end).astype(np.float64).reshape(shape)
    return arr, end + nbytes


def loads_tensor(buf):
    arr, end = read_tensor(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor dump")
    return arr


def save_tensor(path, arr):
    with open(path, "wb") as fh:
        fh.write(dumps_tensor(arr))


def load_tensor(path):
    with open(path, "rb") as fh:
        return loads_tensor(fh.read())
