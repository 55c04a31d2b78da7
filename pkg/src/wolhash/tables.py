"""L hash tables over neuron ids: build, query (union of buckets), rebuild,
statistics, and persistence.

Buckets store neuron ids only. Each table partitions {0..m-1}; a query
returns the deduplicated union of the L buckets addressed by the query's
keys, which may be empty. Tables are stored CSR-style (offsets + id array)
per table, with bucket contents ordered by neuron id.
"""

from dataclasses import dataclass

import numpy as np

from . import fileio, simhash
from .simhash import HashFamily

MAX_BUILD_BITS = 20  # dense 2^K bucket arrays; beyond this the index would not fit desk memory


@dataclass(eq=False)
class HashIndex:
    family: HashFamily
    m: int
    offsets: np.ndarray  # (L, 2^K + 1) int64, per-table bucket boundaries
    ids: np.ndarray  # (L, m) uint32, neuron ids grouped by bucket

    @property
    def num_tables(self) -> int:
        return self.family.L

    @property
    def num_buckets(self) -> int:
        return 1 << self.family.K

    def bucket(self, table: int, key: int) -> np.ndarray:
        lo, hi = self.offsets[table, key], self.offsets[table, key + 1]
        return self.ids[table, lo:hi]

    def __eq__(self, other):
        return (
            isinstance(other, HashIndex)
            and self.m == other.m
            and self.family == other.family
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.ids, other.ids)
        )


def build(family: HashFamily, W: np.ndarray, b: np.ndarray) -> HashIndex:
    """Insert every neuron [w_i, b_i] into one bucket per table."""
    W = np.asarray(W, np.float32)
    b = np.asarray(b, np.float32)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise ValueError("W must be (m, h) and b length m")
    if family.width != W.shape[1] + 1:
        raise ValueError(f"family width {family.width} != h+1 = {W.shape[1] + 1}")
    if family.K > MAX_BUILD_BITS:
        raise ValueError(f"K={family.K} too large to materialize 2^K buckets (max {MAX_BUILD_BITS})")

    m = W.shape[0]
    keys = simhash.hash_keys_batch(family, simhash.augment_neurons(W, b))  # (m, L)
    nb = 1 << family.K
    offsets = np.zeros((family.L, nb + 1), dtype=np.int64)
    ids = np.empty((family.L, m), dtype=np.uint32)
    for l in range(family.L):
        col = keys[:, l]
        ids[l] = np.argsort(col, kind="stable")  # groups by key, id-ordered within buckets
        offsets[l, 1:] = np.cumsum(np.bincount(col, minlength=nb))
    return HashIndex(family, m, offsets, ids)


def query_by_keys(index: HashIndex, keys: np.ndarray) -> np.ndarray:
    """Deduplicated union of the buckets addressed by per-table keys."""
    parts = [index.bucket(l, int(keys[l])) for l in range(index.num_tables)]
    return np.unique(np.concatenate(parts))


def query(index: HashIndex, q: np.ndarray) -> np.ndarray:
    """Neuron ids retrieved for embedding q, hashed as [q, 0]. May be empty."""
    keys = simhash.hash_keys(index.family, simhash.augment_query(q))
    return query_by_keys(index, keys)


def rebuild(index: HashIndex, new_family: HashFamily, W: np.ndarray, b: np.ndarray) -> HashIndex:
    """Fresh index under new hyperplanes; the old index is untouched.

    The index stores ids only, so the neuron vectors are passed in again.
    """
    if (new_family.K, new_family.L, new_family.width) != (index.family.K, index.family.L, index.family.width):
        raise ValueError("rebuild requires matching (K, L, width)")
    if W.shape[0] != index.m:
        raise ValueError("neuron count changed")
    return build(new_family, W, b)


@dataclass
class BucketStats:
    max_size: np.ndarray  # per table
    mean_size: np.ndarray
    variance: np.ndarray
    histogram: dict  # bucket size -> count over all tables

    def summary(self) -> str:
        lines = []
        for l in range(len(self.max_size)):
            lines.append(
                f"table {l}: max {int(self.max_size[l])} mean {self.mean_size[l]:.3f} var {self.variance[l]:.3f}"
            )
        return "\n".join(lines)


def bucket_stats(index: HashIndex) -> BucketStats:
    sizes = np.diff(index.offsets, axis=1)  # (L, 2^K)
    counts = np.bincount(sizes.ravel())
    histogram = {int(s): int(c) for s, c in enumerate(counts) if c > 0}
    return BucketStats(
        max_size=sizes.max(axis=1),
        mean_size=sizes.mean(axis=1),
        variance=sizes.var(axis=1),
        histogram=histogram,
    )


def save_index(index: HashIndex, path) -> None:
    with open(path, "wb") as f:
        fileio.write_header(f, fileio.INDEX_MAGIC, (index.family.K, index.family.L, index.m))
        simhash._write_family(f, index.family)
        lengths = np.diff(index.offsets, axis=1)
        for l in range(index.num_tables):
            fileio.write_array(f, lengths[l], "<u4")
            fileio.write_array(f, index.ids[l], "<u4")


def load_index(path) -> HashIndex:
    with open(path, "rb") as f:
        K, L, m = fileio.read_header(f, fileio.INDEX_MAGIC, 3)
        family = simhash._read_family(f)
        if (family.K, family.L) != (K, L):
            raise fileio.FormatError("embedded family disagrees with index header")
        nb = 1 << K
        offsets = np.zeros((L, nb + 1), dtype=np.int64)
        ids = np.empty((L, m), dtype=np.uint32)
        for l in range(L):
            lengths = fileio.read_array(f, nb, "<u4").astype(np.int64)
            if lengths.sum() != m:
                raise fileio.FormatError(f"table {l}: bucket lengths sum to {lengths.sum()}, expected {m}")
            offsets[l, 1:] = np.cumsum(lengths)
            ids[l] = fileio.read_array(f, m, "<u4")
            seen = np.bincount(ids[l], minlength=m)
            if len(seen) != m or np.any(seen != 1):
                raise fileio.FormatError(f"table {l}: ids are not a permutation of 0..{m - 1}")
        if f.read(1):
            raise fileio.FormatError("trailing bytes after index payload")
    return HashIndex(family, m, offsets, ids)
