"""Sign-of-projection hashing over the bias-augmented space R^(h+1).

A family holds K*L Gaussian hyperplanes: K bits per table, L tables. Discrete
bit j of table l is sign(theta_row . v) with sign(0) = +1; the tanh of the
same projections is the differentiable relaxation used when the hyperplanes
are trained. Keys pack a table's K bits little-endian (bit 0 = first
hyperplane of the table), so every key addresses one of 2^K buckets.
"""

from dataclasses import dataclass

import numpy as np

from . import fileio

MAX_BITS = 30  # keys must fit a native integer


@dataclass(eq=False)
class HashFamily:
    theta: np.ndarray  # (K*L, h+1) float32, one hyperplane per row
    K: int
    L: int

    def __post_init__(self):
        # float32 is canonical (bit-exact files); float64 is accepted so
        # finite-difference checks can run at full precision.
        self.theta = np.ascontiguousarray(self.theta)
        if self.theta.dtype != np.float64:
            self.theta = self.theta.astype(np.float32)
        if self.K < 1 or self.K > MAX_BITS:
            raise ValueError(f"K must be in [1, {MAX_BITS}]")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.theta.ndim != 2 or self.theta.shape[0] != self.K * self.L:
            raise ValueError("theta must have K*L rows")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("theta contains non-finite entries")

    @property
    def width(self) -> int:
        """Hashed-space dimensionality, h+1."""
        return self.theta.shape[1]

    @property
    def h(self) -> int:
        return self.width - 1

    def __eq__(self, other):
        return (
            isinstance(other, HashFamily)
            and self.K == other.K
            and self.L == other.L
            and np.array_equal(self.theta, other.theta)
        )


def init_random(K: int, L: int, h: int, seed: int = 0) -> HashFamily:
    """Fresh family with i.i.d. standard normal hyperplane entries."""
    if h < 1:
        raise ValueError("h must be >= 1")
    if K < 1 or K > MAX_BITS or L < 1:
        raise ValueError(f"need 1 <= K <= {MAX_BITS} and L >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((K * L, h + 1), dtype=np.float32)
    return HashFamily(theta, K, L)


def augment_neurons(W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Neuron points [w_i, b_i], shape (m, h+1)."""
    return np.concatenate([np.asarray(W, np.float32), np.asarray(b, np.float32)[:, None]], axis=1)


def augment_query(q: np.ndarray) -> np.ndarray:
    """Query point [q, 0]."""
    return np.concatenate([np.asarray(q, np.float32), np.zeros(1, np.float32)])


def augment_queries(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, np.float32)
    return np.concatenate([Q, np.zeros((Q.shape[0], 1), np.float32)], axis=1)


def _pack(bits: np.ndarray, K: int, L: int) -> np.ndarray:
    # bits: (..., K*L) boolean -> (..., L) integer keys, little-endian per table
    weights = (1 << np.arange(K, dtype=np.int64))
    return bits.reshape(bits.shape[:-1] + (L, K)).astype(np.int64) @ weights


def hash_keys(family: HashFamily, v: np.ndarray) -> np.ndarray:
    """L bucket keys of one augmented point."""
    v = np.asarray(v)
    if v.shape != (family.width,):
        raise ValueError(f"point width {v.shape} != family width {family.width}")
    bits = (family.theta @ v) >= 0
    return _pack(bits, family.K, family.L)


def hash_keys_batch(family: HashFamily, V: np.ndarray) -> np.ndarray:
    """Keys for a stack of augmented points, shape (n, L)."""
    V = np.asarray(V)
    if V.ndim != 2 or V.shape[1] != family.width:
        raise ValueError(f"point width {V.shape} != family width {family.width}")
    bits = (V @ family.theta.T) >= 0
    return _pack(bits, family.K, family.L)


def relaxed_codes(family: HashFamily, v: np.ndarray) -> np.ndarray:
    """tanh-relaxed codes, shape (L, K); signs agree with the discrete bits
    wherever the projection is nonzero."""
    v = np.asarray(v)
    if v.shape != (family.width,):
        raise ValueError(f"point width {v.shape} != family width {family.width}")
    return np.tanh(family.theta @ v).reshape(family.L, family.K)


def analytic_collision(angle: float, K: int) -> float:
    """Chance that two points at the given angle share a full K-bit key under
    random Gaussian hyperplanes: (1 - angle/pi)^K."""
    if not 0.0 <= angle <= np.pi:
        raise ValueError("angle must be in [0, pi]")
    if K < 1:
        raise ValueError("K must be >= 1")
    return float((1.0 - angle / np.pi) ** K)


def save_family(family: HashFamily, path) -> None:
    with open(path, "wb") as f:
        fileio.write_header(f, fileio.FAMILY_MAGIC, (family.K, family.L, family.h))
        fileio.write_array(f, family.theta, "<f4")


def load_family(path) -> HashFamily:
    with open(path, "rb") as f:
        family = _read_family(f)
        if f.read(1):
            raise fileio.FormatError("trailing bytes after family payload")
    return family


def _read_family(f) -> HashFamily:
    K, L, h = fileio.read_header(f, fileio.FAMILY_MAGIC, 3)
    theta = fileio.read_array(f, K * L * (h + 1), "<f4").reshape(K * L, h + 1)
    return HashFamily(theta, K, L)


def _write_family(f, family: HashFamily) -> None:
    fileio.write_header(f, fileio.FAMILY_MAGIC, (family.K, family.L, family.h))
    fileio.write_array(f, family.theta, "<f4")
