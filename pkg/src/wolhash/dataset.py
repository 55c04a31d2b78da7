"""Sparse multi-label datasets: parsing, synthesis, and splitting.

File format (one text format, gzip accepted when the name ends in ``.gz``)::

    num_examples input_dim num_classes
    lbl1,lbl2,... idx:val idx:val ...
    ...

Labels and feature ids are 0-based. Feature indices must be strictly
increasing within a line; zero-valued entries are dropped silently (common in
bag-of-words exports). Parsing is strict: any malformed line aborts with the
offending line number.
"""

import gzip
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse as sp


class DataFormatError(ValueError):
    """A dataset file violates the format contract."""


@dataclass(eq=False)
class SparseVector:
    """Sorted sparse feature vector with no stored zeros."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ValueError("indices and values must be 1-d and equal length")
        if self.indices.size:
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ValueError("feature index out of range")
            if np.any(self.values == 0.0):
                raise ValueError("zero values must be elided")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float32)
        out[self.indices] = self.values
        return out

    def __eq__(self, other):
        return (
            isinstance(other, SparseVector)
            and self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


@dataclass(eq=False)
class LabeledExample:
    features: SparseVector
    labels: tuple  # sorted class ids

    def __post_init__(self):
        self.labels = tuple(sorted(int(l) for l in self.labels))

    @property
    def label_set(self) -> frozenset:
        return frozenset(self.labels)

    def __eq__(self, other):
        return (
            isinstance(other, LabeledExample)
            and self.labels == other.labels
            and self.features == other.features
        )


@dataclass(eq=False)
class SparseDataset:
    examples: list = field(default_factory=list)
    input_dim: int = 0
    num_classes: int = 0

    def __post_init__(self):
        for i, ex in enumerate(self.examples):
            if ex.features.dim != self.input_dim:
                raise ValueError(f"example {i}: feature dim {ex.features.dim} != {self.input_dim}")
            if ex.labels and (ex.labels[0] < 0 or ex.labels[-1] >= self.num_classes):
                raise ValueError(f"example {i}: label out of range")

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i) -> LabeledExample:
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def __eq__(self, other):
        return (
            isinstance(other, SparseDataset)
            and self.input_dim == other.input_dim
            and self.num_classes == other.num_classes
            and self.examples == other.examples
        )

    def feature_matrix(self) -> sp.csr_matrix:
        """All feature vectors stacked as a CSR matrix (n x input_dim)."""
        indptr = np.zeros(len(self.examples) + 1, dtype=np.int64)
        for i, ex in enumerate(self.examples):
            indptr[i + 1] = indptr[i] + ex.features.nnz
        indices = np.concatenate([ex.features.indices for ex in self.examples]) if self.examples else np.zeros(0, np.int64)
        data = np.concatenate([ex.features.values for ex in self.examples]) if self.examples else np.zeros(0, np.float32)
        return sp.csr_matrix((data, indices, indptr), shape=(len(self.examples), self.input_dim), dtype=np.float32)

    def label_sets(self) -> list:
        return [ex.label_set for ex in self.examples]

    def label_matrix(self, normalize: bool = False) -> sp.csr_matrix:
        """Multi-hot label matrix (n x num_classes); rows sum to 1 when normalized."""
        indptr = np.zeros(len(self.examples) + 1, dtype=np.int64)
        cols = []
        data = []
        for i, ex in enumerate(self.examples):
            indptr[i + 1] = indptr[i] + len(ex.labels)
            cols.extend(ex.labels)
            weight = 1.0 / len(ex.labels) if (normalize and ex.labels) else 1.0
            data.extend([weight] * len(ex.labels))
        return sp.csr_matrix(
            (np.asarray(data, np.float32), np.asarray(cols, np.int64), indptr),
            shape=(len(self.examples), self.num_classes),
            dtype=np.float32,
        )


def _open_text(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t")
    return open(path, mode)


def parse_dataset(path) -> SparseDataset:
    """Strictly parse a dataset file; malformed input raises DataFormatError."""
    with _open_text(path, "r") as f:
        header = f.readline()
        if not header.strip():
            raise DataFormatError("line 1: missing header")
        parts = header.split()
        if len(parts) != 3:
            raise DataFormatError("line 1: header must be 'num_examples input_dim num_classes'")
        try:
            n, input_dim, num_classes = (int(p) for p in parts)
        except ValueError:
            raise DataFormatError("line 1: header fields must be integers") from None
        if n < 0 or input_dim <= 0 or num_classes <= 0:
            raise DataFormatError("line 1: header fields out of range")

        examples = []
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                raise DataFormatError(f"line {lineno}: blank line")
            examples.append(_parse_line(line, lineno, input_dim, num_classes))
        if len(examples) != n:
            raise DataFormatError(f"expected {n} examples, found {len(examples)}")
    return SparseDataset(examples, input_dim, num_classes)


def _parse_line(line: str, lineno: int, input_dim: int, num_classes: int) -> LabeledExample:
    tokens = line.split()
    label_tok = tokens[0]
    if ":" in label_tok:
        raise DataFormatError(f"line {lineno}: empty label list")
    try:
        labels = [int(t) for t in label_tok.split(",") if t != ""]
    except ValueError:
        raise DataFormatError(f"line {lineno}: bad label list {label_tok!r}") from None
    if not labels:
        raise DataFormatError(f"line {lineno}: empty label list")
    for l in labels:
        if l < 0 or l >= num_classes:
            raise DataFormatError(f"line {lineno}: label out of range ({l} >= {num_classes})")

    idxs = []
    vals = []
    prev = -1
    for tok in tokens[1:]:
        try:
            idx_s, val_s = tok.split(":")
            idx = int(idx_s)
            val = float(val_s)
        except ValueError:
            raise DataFormatError(f"line {lineno}: bad feature token {tok!r}") from None
        if idx < 0 or idx >= input_dim:
            raise DataFormatError(f"line {lineno}: feature index out of range ({idx} >= {input_dim})")
        if idx <= prev:
            raise DataFormatError(f"line {lineno}: non-monotone feature indices")
        prev = idx
        if val == 0.0:
            continue  # zero-elision
        idxs.append(idx)
        vals.append(val)
    return LabeledExample(SparseVector(np.array(idxs, np.int64), np.array(vals, np.float32), input_dim), tuple(sorted(set(labels))))


def serialize_dataset(dataset: SparseDataset, path) -> None:
    with _open_text(path, "w") as f:
        f.write(f"{len(dataset)} {dataset.input_dim} {dataset.num_classes}\n")
        for ex in dataset:
            feats = " ".join(f"{int(i)}:{float(v)!r}" for i, v in zip(ex.features.indices, ex.features.values))
            line = ",".join(str(l) for l in ex.labels)
            f.write(line + (" " + feats if feats else "") + "\n")


def generate_synthetic(
    num_classes: int,
    input_dim: int,
    num_examples: int,
    classes_per_example: int = 1,
    noise: float = 0.0,
    seed: int = 0,
) -> SparseDataset:
    """Planted dataset: each class owns a disjoint feature block.

    An example labeled with classes C activates every feature of each owned
    block (value 1.0) plus ``round(noise * signal_size)`` extra random
    features outside the signal. Deterministic given the seed.
    """
    if classes_per_example < 1 or num_classes < classes_per_example:
        raise ValueError("need num_classes >= classes_per_example >= 1")
    if input_dim < num_classes:
        raise ValueError("need input_dim >= num_classes")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must be in [0, 1]")
    if num_examples < 0:
        raise ValueError("num_examples must be >= 0")

    block = input_dim // num_classes
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(num_examples):
        classes = np.sort(rng.choice(num_classes, size=classes_per_example, replace=False))
        sig = np.concatenate([np.arange(c * block, (c + 1) * block) for c in classes])
        sig_set = set(int(i) for i in sig)
        k_noise = min(int(round(noise * sig.size)), input_dim - sig.size)
        extra = []
        while len(extra) < k_noise:
            cand = rng.integers(0, input_dim, size=max(4, 2 * k_noise))
            for c in cand:
                c = int(c)
                if c not in sig_set and c not in extra:
                    extra.append(c)
                    if len(extra) == k_noise:
                        break
        idxs = np.sort(np.concatenate([sig, np.array(extra, np.int64)]) if extra else sig)
        vec = SparseVector(idxs, np.ones(idxs.size, np.float32), input_dim)
        examples.append(LabeledExample(vec, tuple(int(c) for c in classes)))
    return SparseDataset(examples, input_dim, num_classes)


def split(dataset: SparseDataset, train_fraction: float, seed: int = 0):
    """Disjoint shuffled (train, test) split, deterministic given the seed."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(train_fraction * n + 0.5)
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    train = SparseDataset([dataset[int(i)] for i in train_idx], dataset.input_dim, dataset.num_classes)
    test = SparseDataset([dataset[int(i)] for i in test_idx], dataset.input_dim, dataset.num_classes)
    return train, test
