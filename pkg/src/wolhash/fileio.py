"""Little-endian binary framing shared by the model, family, and index files.

Every artifact starts with a 4-byte magic, a u32 format version, and a fixed
number of u64 dimensions; payloads are raw arrays in row-major order.
"""

import numpy as np

MODEL_MAGIC = b"WOLM"
FAMILY_MAGIC = b"WOLH"
INDEX_MAGIC = b"WOLT"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """A binary artifact failed a magic, version, length, or content check."""


def read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: expected {n} bytes, got {len(data)}")
    return data


def write_header(f, magic: bytes, dims) -> None:
    f.write(magic)
    f.write(np.array(FORMAT_VERSION, dtype="<u4").tobytes())
    f.write(np.asarray(list(dims), dtype="<u8").tobytes())


def read_header(f, magic: bytes, ndims: int) -> tuple:
    got = read_exact(f, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    version = int(np.frombuffer(read_exact(f, 4), dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    dims = np.frombuffer(read_exact(f, 8 * ndims), dtype="<u8")
    return tuple(int(d) for d in dims)


def write_array(f, arr, dtype) -> None:
    f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_array(f, count: int, dtype) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    return np.frombuffer(read_exact(f, count * itemsize), dtype=dtype).copy()
