"""Online inference: retrieve a neuron subset per query, score only that
subset, and return top-k predictions.

Modes: "full" scores all m neurons; "learned-hash" and "random-hash" score
only the ids returned by the supplied index (the two share a code path and
differ in which index the caller built). Logits are ranked raw -- any monotone
activation would order them identically; subset probabilities, when wanted,
are a softmax over the retrieved set only. Timing covers the last layer only
(hashing + lookup + partial matmul + top-k); embedding time is reported
separately. Ties in logit break toward the lower neuron id.
"""

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tables
from .dataset import SparseDataset
from .model import BaseModel

MODES = ("full", "learned-hash", "random-hash")
SPARSE_MODES = ("learned-hash", "random-hash")
_CHUNK = 256  # fixed work unit so thread count cannot affect results

DEFAULT_JOULES_PER_MAC = 1e-9  # arbitrary scale; only ratios are meaningful


@dataclass
class Prediction:
    ids: np.ndarray  # top-k neuron ids, logit-descending, ties to lower id
    logits: np.ndarray
    sample_size: int  # |S| scored for this query (m in full mode)
    mode: str

    @property
    def topk(self):
        return [(int(i), float(z)) for i, z in zip(self.ids, self.logits)]

    def __eq__(self, other):
        return (
            isinstance(other, Prediction)
            and self.mode == other.mode
            and self.sample_size == other.sample_size
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.logits, other.logits)
        )


def top_k_by_logit(ids: np.ndarray, logits: np.ndarray, k: int):
    """Top-k by logit descending, ties broken by lower id; exact under ties."""
    n = len(ids)
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=logits.dtype)
    if n > k:
        part = np.argpartition(logits, n - k)[n - k :]
        kth = logits[part].min()
        cand = np.flatnonzero(logits >= kth)  # includes boundary ties
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], -logits[cand].astype(np.float64)))
    cand = cand[order[:k]]
    return np.asarray(ids[cand], dtype=np.int64), logits[cand]


def softmax(z: np.ndarray) -> np.ndarray:
    """Probabilities over a retrieved subset's logits."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        return z
    e = np.exp(z - z.max())
    return e / e.sum()


def infer_one(model: BaseModel, index, q: np.ndarray, k: int, mode: str = "full", fallback_full: bool = False) -> Prediction:
    """One query. Sparse modes score only the retrieved ids; an empty
    retrieval yields an empty prediction (a recorded miss) unless
    fallback_full asks for a full scan instead."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "full":
        z = model.full_logits(q)
        ids, logits = top_k_by_logit(np.arange(model.num_classes), z, k)
        return Prediction(ids, logits, model.num_classes, mode)
    if index is None:
        raise ValueError(f"mode {mode!r} requires an index")
    S = tables.query(index, q)
    if len(S) == 0 and fallback_full:
        z = model.full_logits(q)
        ids, logits = top_k_by_logit(np.arange(model.num_classes), z, k)
        return Prediction(ids, logits, model.num_classes, mode)
    z = model.logits_subset(q, S)
    ids, logits = top_k_by_logit(S.astype(np.int64), z, k)
    return Prediction(ids, logits, len(S), mode)


@dataclass
class BatchStats:
    mode: str
    n: int
    mac_count: int  # closed form: full n*m*(h+1); sparse sum|S|*(h+1) + n*K*L*(h+1)
    last_layer_seconds: float
    embed_seconds: float
    mean_sample_size: float

    def time_per_1000(self) -> float:
        return self.last_layer_seconds / self.n * 1000.0 if self.n else float("nan")

    def energy_per_1000(self, joules_per_mac: float = DEFAULT_JOULES_PER_MAC) -> float:
        return energy_proxy(self.mac_count, joules_per_mac) / self.n * 1000.0 if self.n else float("nan")


@dataclass
class BatchResult:
    predictions: list
    stats: BatchStats
    retrieved: list = field(default=None)  # per-query id arrays when requested


def energy_proxy(mac_count: float, joules_per_mac: float = DEFAULT_JOULES_PER_MAC) -> float:
    """Multiply-accumulate count scaled to proxy joules."""
    return float(mac_count) * joules_per_mac


def _embeddings_for(model: BaseModel, data):
    if isinstance(data, np.ndarray):
        return data
    if isinstance(data, SparseDataset):
        return model.embed_batch(data.feature_matrix())
    raise TypeError("data must be a SparseDataset or an (n, h) embedding array")


def infer_batch(
    model: BaseModel,
    index,
    data,
    k: int,
    mode: str = "full",
    threads: int = 1,
    keep_retrieved: bool = False,
    fallback_full: bool = False,
) -> BatchResult:
    """Batched inference; identical output for any thread count."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode in SPARSE_MODES and index is None:
        raise ValueError(f"mode {mode!r} requires an index")

    t0 = time.perf_counter()
    Q = _embeddings_for(model, data)
    embed_seconds = time.perf_counter() - t0
    n = Q.shape[0]
    hplus1 = model.hidden + 1

    chunks = [(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    results = [None] * len(chunks)
    retrieved = [None] * len(chunks) if (keep_retrieved and mode in SPARSE_MODES) else None

    def run_chunk(ci):
        lo, hi = chunks[ci]
        preds = []
        kept = [] if retrieved is not None else None
        sizes = 0
        if mode == "full":
            Z = Q[lo:hi] @ model.W.T + model.b
            all_ids = np.arange(model.num_classes)
            for r in range(hi - lo):
                ids, logits = top_k_by_logit(all_ids, Z[r], k)
                preds.append(Prediction(ids, logits, model.num_classes, mode))
            sizes = (hi - lo) * model.num_classes
        else:
            for r in range(lo, hi):
                S = tables.query(index, Q[r])
                if len(S) == 0 and fallback_full:
                    pred = infer_one(model, index, Q[r], k, mode, fallback_full=True)
                else:
                    z = model.logits_subset(Q[r], S)
                    ids, logits = top_k_by_logit(S.astype(np.int64), z, k)
                    pred = Prediction(ids, logits, len(S), mode)
                preds.append(pred)
                sizes += pred.sample_size
                if kept is not None:
                    kept.append(S)
        results[ci] = preds
        if retrieved is not None:
            retrieved[ci] = kept
        return sizes

    t1 = time.perf_counter()
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            size_list = list(pool.map(run_chunk, range(len(chunks))))
    else:
        size_list = [run_chunk(ci) for ci in range(len(chunks))]
    last_layer_seconds = time.perf_counter() - t1

    predictions = [p for chunk in results for p in chunk]
    total_scored = int(sum(size_list))
    if mode == "full":
        mac_count = n * model.num_classes * hplus1
    else:
        mac_count = total_scored * hplus1 + n * index.family.K * index.family.L * hplus1
    stats = BatchStats(
        mode=mode,
        n=n,
        mac_count=int(mac_count),
        last_layer_seconds=last_layer_seconds,
        embed_seconds=embed_seconds,
        mean_sample_size=total_scored / n if n else float("nan"),
    )
    flat_retrieved = [s for chunk in retrieved for s in chunk] if retrieved is not None else None
    return BatchResult(predictions, stats, flat_retrieved)


def write_predictions_csv(path, predictions) -> None:
    """Dump: example_id,rank,neuron_id,logit,sample_size,mode."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["example_id", "rank", "neuron_id", "logit", "sample_size", "mode"])
        for ex_id, pred in enumerate(predictions):
            for rank, (nid, logit) in enumerate(pred.topk, start=1):
                writer.writerow([ex_id, rank, nid, repr(logit), pred.sample_size, pred.mode])
