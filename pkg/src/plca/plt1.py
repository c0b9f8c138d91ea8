"""PLT1 raw tensor files.

Layout (little-endian): magic ``b"PLT1"``, u32 rank, ``rank`` u32 extents,
then float64 values in row-major order.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PLT1"


class PLT1Error(ValueError):
    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{path}: {reason}")


def encode(array):
    a = np.asarray(array, dtype="<f8")  # keeps rank 0, unlike ascontiguousarray
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes(order="C")


def decode(buf, path="<bytes>"):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise PLT1Error(path, "bad magic")
    (rank,) = struct.unpack_from("<I", buf, 4)
    header = 8 + 4 * rank
    if len(buf) < header:
        raise PLT1Error(path, f"truncated header for rank {rank}")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != header + 8 * count:
        raise PLT1Error(path, f"payload is {len(buf) - header} bytes, "
                              f"expected {8 * count} for shape {tuple(shape)}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=header).reshape(shape).astype(np.float64)


def save(path, array):
    Path(path).write_bytes(encode(array))


def load(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise PLT1Error(path, f"cannot read ({exc.strerror})") from None
    return decode(buf, path)
