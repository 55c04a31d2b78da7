"""One-hidden-layer base network over sparse multi-hot inputs.

The last hidden activation q = relu(E^T x) is the retrieval query; the output
layer supplies one neuron [w_i, b_i] per class. Parameters are float32 so the
on-disk format round-trips bit-exactly; gradient checks run in float64 copies.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse as sp
from scipy.special import expit

from . import fileio
from .dataset import SparseDataset, SparseVector


class NumericError(RuntimeError):
    """Optimization produced a non-finite loss."""


@dataclass
class TrainConfig:
    hidden: int = 128
    epochs: int = 10
    lr: float = 0.1
    batch: int = 64
    seed: int = 0
    loss: str = "softmax"  # "softmax": CE vs uniform-over-labels; "bce": per-class sigmoid

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 0 or self.batch < 1:
            raise ValueError("hidden/epochs/batch out of range")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.loss not in ("softmax", "bce"):
            raise ValueError(f"unknown loss {self.loss!r}")


class BaseModel:
    """Frozen-at-inference network: embedding E, output weights W, bias b."""

    def __init__(self, E, W, b):
        self.E = np.ascontiguousarray(E, dtype=np.float32)
        self.W = np.ascontiguousarray(W, dtype=np.float32)
        self.b = np.ascontiguousarray(b, dtype=np.float32)
        if self.E.ndim != 2 or self.W.ndim != 2 or self.b.ndim != 1:
            raise ValueError("E and W must be matrices, b a vector")
        if self.E.shape[1] != self.W.shape[1]:
            raise ValueError("hidden widths of E and W disagree")
        if self.W.shape[0] != self.b.shape[0]:
            raise ValueError("W rows and b length disagree")
        for name, arr in (("E", self.E), ("W", self.W), ("b", self.b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def input_dim(self) -> int:
        return self.E.shape[0]

    @property
    def hidden(self) -> int:
        return self.E.shape[1]

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def embed(self, x: SparseVector) -> np.ndarray:
        """q = relu(E^T x), touching only the nonzero features of x."""
        if x.dim != self.input_dim:
            raise ValueError(f"input dim {x.dim} != model input dim {self.input_dim}")
        if x.nnz == 0:
            return np.zeros(self.hidden, dtype=np.float32)
        q = self.E[x.indices].T @ x.values
        return np.maximum(q, 0.0, out=q)

    def embed_batch(self, X: sp.csr_matrix) -> np.ndarray:
        if X.shape[1] != self.input_dim:
            raise ValueError("feature matrix width != model input dim")
        A = X @ self.E
        return np.maximum(A, 0.0, out=A)

    def full_logits(self, q: np.ndarray) -> np.ndarray:
        """z_i = q . w_i + b_i for every output neuron."""
        q = np.asarray(q)
        if q.shape != (self.hidden,):
            raise ValueError("embedding width mismatch")
        return self.W @ q + self.b

    def logits_subset(self, q: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Logits of the given neuron ids only."""
        if len(ids) == 0:
            return np.zeros(0, dtype=self.W.dtype)
        return self.W[ids] @ np.asarray(q) + self.b[ids]

    def __eq__(self, other):
        return (
            isinstance(other, BaseModel)
            and np.array_equal(self.E, other.E)
            and np.array_equal(self.W, other.W)
            and np.array_equal(self.b, other.b)
        )


def _init_params(rng, input_dim, hidden, num_classes):
    se = 1.0 / np.sqrt(input_dim)
    sw = 1.0 / np.sqrt(hidden)
    E = rng.uniform(-se, se, size=(input_dim, hidden)).astype(np.float32)
    W = rng.uniform(-sw, sw, size=(num_classes, hidden)).astype(np.float32)
    b = rng.uniform(-sw, sw, size=num_classes).astype(np.float32)
    return E, W, b


def train(dataset: SparseDataset, config: TrainConfig, on_epoch=None) -> BaseModel:
    """Mini-batch SGD on the configured loss; deterministic given the seed.

    on_epoch(epoch, mean_loss, train_p_at_1) is called after each epoch.
    Raises NumericError if the loss turns non-finite.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    for i, ex in enumerate(dataset):
        if not ex.labels:
            raise ValueError(f"example {i} has no labels; training requires labels")

    rng = np.random.default_rng(config.seed)
    E, W, b = _init_params(rng, dataset.input_dim, config.hidden, dataset.num_classes)
    X = dataset.feature_matrix()
    T = dataset.label_matrix(normalize=(config.loss == "softmax"))
    label_sets = dataset.label_sets()

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch):
            idx = perm[start : start + config.batch]
            Xb = X[idx]
            Tb = T[idx]
            B = len(idx)

            # divergence surfaces as a non-finite loss below; don't warn on the way
            with np.errstate(invalid="ignore", over="ignore"):
                A = Xb @ E
                Qb = np.maximum(A, 0.0)
                Z = Qb @ W.T + b

                if config.loss == "softmax":
                    Zs = Z - Z.max(axis=1, keepdims=True)
                    expZ = np.exp(Zs)
                    denom = expZ.sum(axis=1, keepdims=True)
                    logp = Zs - np.log(denom)
                    loss = float(-Tb.multiply(logp).sum() / B)
                    dZ = (expZ / denom - Tb.toarray()) / B
                else:
                    loss = float((np.logaddexp(0.0, Z).sum() - Tb.multiply(Z).sum()) / B)
                    dZ = (expit(Z) - Tb.toarray()) / B
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {start // config.batch}")
            losses.append(loss)

            dW = dZ.T @ Qb
            db = dZ.sum(axis=0)
            dQ = dZ @ W
            dA = dQ * (A > 0)
            dE = (Xb.T @ dA).astype(np.float32, copy=False)
            W -= config.lr * dW.astype(np.float32, copy=False)
            b -= config.lr * db.astype(np.float32, copy=False)
            E -= config.lr * dE

        if on_epoch is not None:
            model = BaseModel(E, W, b)
            on_epoch(epoch, float(np.mean(losses)), train_p_at_1(model, X, label_sets))
    return BaseModel(E, W, b)


def train_p_at_1(model: BaseModel, X: sp.csr_matrix, label_sets, chunk: int = 1024) -> float:
    """Fraction of examples whose top logit is one of their labels."""
    hits = 0
    for start in range(0, X.shape[0], chunk):
        Q = model.embed_batch(X[start : start + chunk])
        Z = Q @ model.W.T + model.b
        top = np.argmax(Z, axis=1)
        hits += sum(int(t) in label_sets[start + i] for i, t in enumerate(top))
    return hits / X.shape[0]


def _example_loss_f64(E, W, b, x_idx, x_val, labels):
    """Softmax-uniform training loss of one example, evaluated in float64."""
    if len(x_idx):
        a = E[x_idx].T @ x_val
    else:
        a = np.zeros(E.shape[1])
    q = np.maximum(a, 0.0)
    z = W @ q + b
    zs = z - z.max()
    logp = zs - np.log(np.exp(zs).sum())
    return -float(np.mean(logp[labels]))


def grad_check(model: BaseModel, example, step: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on float64 copies of the parameters; the comparison uses
    |a - n| / max(|a|, |n|, 1e-3) per entry.
    """
    E = model.E.astype(np.float64)
    W = model.W.astype(np.float64)
    b = model.b.astype(np.float64)
    x_idx = example.features.indices
    x_val = example.features.values.astype(np.float64)
    labels = np.array(example.labels, dtype=np.int64)

    # analytic gradients of the same f64 loss
    a = E[x_idx].T @ x_val if len(x_idx) else np.zeros(E.shape[1])
    q = np.maximum(a, 0.0)
    z = W @ q + b
    zs = z - z.max()
    p = np.exp(zs)
    p /= p.sum()
    t = np.zeros_like(p)
    t[labels] = 1.0 / len(labels)
    dz = p - t
    dW = np.outer(dz, q)
    db = dz
    dq = W.T @ dz
    da = np.where(a > 0, dq, 0.0)
    dE = np.zeros_like(E)
    if len(x_idx):
        dE[x_idx] = np.outer(x_val, da)

    def loss_at(Ep, Wp, bp):
        return _example_loss_f64(Ep, Wp, bp, x_idx, x_val, labels)

    max_rel = 0.0
    for param, grad in ((E, dE), (W, dW), (b, db)):
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = param[ix]
            param[ix] = orig + step
            f1 = loss_at(E, W, b)
            param[ix] = orig - step
            f2 = loss_at(E, W, b)
            param[ix] = orig
            numeric = (f1 - f2) / (2.0 * step)
            analytic = grad[ix]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3)
            max_rel = max(max_rel, rel)
    return max_rel


def save_model(model: BaseModel, path) -> None:
    with open(path, "wb") as f:
        fileio.write_header(f, fileio.MODEL_MAGIC, (model.input_dim, model.hidden, model.num_classes))
        fileio.write_array(f, model.E, "<f4")
        fileio.write_array(f, model.W, "<f4")
        fileio.write_array(f, model.b, "<f4")


def load_model(path) -> BaseModel:
    with open(path, "rb") as f:
        input_dim, hidden, m = fileio.read_header(f, fileio.MODEL_MAGIC, 3)
        E = fileio.read_array(f, input_dim * hidden, "<f4").reshape(input_dim, hidden)
        W = fileio.read_array(f, m * hidden, "<f4").reshape(m, hidden)
        b = fileio.read_array(f, m, "<f4")
        if f.read(1):
            raise fileio.FormatError("trailing bytes after model payload")
    return BaseModel(E, W, b)
