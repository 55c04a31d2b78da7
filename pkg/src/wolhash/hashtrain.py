"""Training the hash family from retrieval feedback.

Each preprocessing round mines pairs against the current buckets: a positive
pair is a label neuron the index missed despite a logit above t1; a negative
pair is a retrieved non-label neuron with a logit below t2. The balanced
pairs drive SGD on a per-table logistic loss over tanh-relaxed codes, pulling
positives into shared buckets and pushing negatives apart; the tables are
rebuilt after every round. Queries and neuron vectors stay frozen; only the
hyperplanes move.

Two conditioning choices keep the relaxation trainable (discrete keys are
invariant to both): pair vectors are snapshotted unit-normalized, and
hyperplane rows are renormalized after every SGD step. Without them the tanh
saturates and gradients vanish long before bucket keys actually match.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import simhash, tables
from .model import BaseModel, NumericError
from .simhash import HashFamily
from .tables import HashIndex


@dataclass
class HashTrainConfig:
    t1: object  # positive logit threshold: float, or per-query percentile like "p99"
    t2: object  # negative logit threshold, same convention; t1 > t2
    lr: float = 0.05
    epochs: int = 3
    minibatch: int = 256
    rounds: int = 10
    seed: int = 0
    max_probe_pairs: int = 20000  # cap on the fixed pair set used for trend logging

    def __post_init__(self):
        k1, v1 = _parse_threshold(self.t1)
        k2, v2 = _parse_threshold(self.t2)
        if k1 != k2:
            raise ValueError("t1 and t2 must both be absolute or both percentiles")
        if not v1 > v2:
            raise ValueError(f"need t1 > t2, got {self.t1!r} <= {self.t2!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 1 or self.minibatch < 1 or self.rounds < 0:
            raise ValueError("epochs/minibatch/rounds out of range")


def _parse_threshold(t):
    if isinstance(t, str):
        s = t.strip().lower()
        if s.startswith("p"):
            pct = float(s[1:])
            if not 0.0 <= pct <= 100.0:
                raise ValueError(f"percentile out of range: {t!r}")
            return "pct", pct
        return "raw", float(s)
    return "raw", float(t)


def resolve_thresholds(model: BaseModel, Q: np.ndarray, config: HashTrainConfig, chunk: int = 256):
    """Per-query (t1, t2) arrays; percentiles are taken over each query's full logits."""
    n = Q.shape[0]
    k1, v1 = _parse_threshold(config.t1)
    _, v2 = _parse_threshold(config.t2)
    if k1 == "raw":
        return np.full(n, v1), np.full(n, v2)
    t1s = np.empty(n)
    t2s = np.empty(n)
    for start in range(0, n, chunk):
        Z = Q[start : start + chunk] @ model.W.T + model.b
        t1s[start : start + chunk] = np.percentile(Z, v1, axis=1)
        t2s[start : start + chunk] = np.percentile(Z, v2, axis=1)
    return t1s, t2s


@dataclass
class PairBatch:
    """Balanced positive/negative training pairs, queries snapshotted by value."""

    queries_aug: np.ndarray  # (n_queries, h+1), rows [q, 0]
    neurons_aug: np.ndarray  # (m, h+1), rows [w_i, b_i]
    pos: np.ndarray  # (g, 2) int64: (query_row, neuron_id)
    neg: np.ndarray  # (g, 2)
    num_pos_collected: int = 0
    num_neg_collected: int = 0
    label_recall: float = float("nan")  # measured during collection
    mean_sample_size: float = float("nan")

    @property
    def g(self) -> int:
        return len(self.pos)


def _empty_pairs() -> np.ndarray:
    return np.zeros((0, 2), dtype=np.int64)


def unit_rows(V: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm; zero rows pass through."""
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return V / norms


def collect_pairs(
    index: HashIndex,
    model: BaseModel,
    train_data,
    config: HashTrainConfig,
    queries: np.ndarray = None,
    thresholds=None,
    seed: int = None,
) -> PairBatch:
    """Mine balanced pairs from the current bucket contents.

    Candidates are gathered in example order (labels, then retrieved ids),
    shuffled with the seed, and truncated to g = min(|P+|, |P-|). `queries`
    and `thresholds` may be passed in to avoid recomputation across rounds.
    The snapshotted pair vectors are unit-normalized (hash keys are invariant
    to per-point scale; the tanh relaxation is not).
    """
    if queries is None:
        queries = model.embed_batch(train_data.feature_matrix())
    if thresholds is None:
        thresholds = resolve_thresholds(model, queries, config)
    t1s, t2s = thresholds
    n = queries.shape[0]

    qaug = simhash.augment_queries(queries)
    naug = simhash.augment_neurons(model.W, model.b)
    keys = simhash.hash_keys_batch(index.family, qaug)

    pos_chunks = []
    neg_chunks = []
    recall_total = 0.0
    recall_count = 0
    size_total = 0
    for i in range(n):
        ex = train_data[i]
        S = tables.query_by_keys(index, keys[i]).astype(np.int64)
        size_total += len(S)
        labels = np.asarray(ex.labels, dtype=np.int64)
        if len(labels):
            in_S = np.isin(labels, S)
            recall_total += float(in_S.mean())
            recall_count += 1
            missed = labels[~in_S]
            if len(missed):
                zl = model.logits_subset(queries[i], missed)
                sel = missed[zl > t1s[i]]
                if len(sel):
                    pos_chunks.append(np.stack([np.full(len(sel), i, np.int64), sel], axis=1))
        if len(S):
            zs = model.logits_subset(queries[i], S)
            mask = zs < t2s[i]
            if len(labels):
                mask &= ~np.isin(S, labels)
            sel = S[mask]
            if len(sel):
                neg_chunks.append(np.stack([np.full(len(sel), i, np.int64), sel], axis=1))

    rng = np.random.default_rng(config.seed if seed is None else seed)
    pos = np.concatenate(pos_chunks) if pos_chunks else _empty_pairs()
    neg = np.concatenate(neg_chunks) if neg_chunks else _empty_pairs()
    num_pos, num_neg = len(pos), len(neg)
    pos = pos[rng.permutation(num_pos)]
    neg = neg[rng.permutation(num_neg)]
    g = min(num_pos, num_neg)
    return PairBatch(
        queries_aug=unit_rows(qaug),
        neurons_aug=unit_rows(naug),
        pos=pos[:g],
        neg=neg[:g],
        num_pos_collected=num_pos,
        num_neg_collected=num_neg,
        label_recall=recall_total / recall_count if recall_count else float("nan"),
        mean_sample_size=size_total / n if n else float("nan"),
    )


def _gather(batch: PairBatch):
    """Stacked (Vw, Vq, is_pos) over positives then negatives."""
    rows = np.concatenate([batch.pos, batch.neg]) if (len(batch.pos) or len(batch.neg)) else _empty_pairs()
    Vq = batch.queries_aug[rows[:, 0]] if len(rows) else np.zeros((0, batch.queries_aug.shape[1]), np.float32)
    Vw = batch.neurons_aug[rows[:, 1]] if len(rows) else np.zeros((0, batch.neurons_aug.shape[1]), np.float32)
    is_pos = np.zeros(len(rows), dtype=bool)
    is_pos[: len(batch.pos)] = True
    return Vw, Vq, is_pos


def _pair_terms(theta: np.ndarray, Vw: np.ndarray, Vq: np.ndarray, is_pos: np.ndarray, K: int, L: int, want_grad: bool):
    """Loss (sum over pairs and tables) and optionally its theta gradient.

    Per pair and table l: s_l = tanh(theta_l vw) . tanh(theta_l vq) over the
    table's K rows; positives contribute -log(sigmoid(s_l)), negatives
    -log(1 - sigmoid(s_l)). Scoring tables separately keeps every bucket key
    an explicit target; a single dot product over all K*L bits saturates the
    logistic on diffuse agreement that never lines up any one table's key.
    """
    if len(Vw) == 0:
        loss = 0.0
        return (loss, np.zeros_like(theta)) if want_grad else (loss, None)
    A = np.tanh(Vw @ theta.T)  # (P, K*L)
    C = np.tanh(Vq @ theta.T)
    P = len(Vw)
    s = (A * C).reshape(P, L, K).sum(axis=2)  # (P, L)
    loss = float(np.logaddexp(0.0, -s[is_pos]).sum() + np.logaddexp(0.0, s[~is_pos]).sum())
    if not want_grad:
        return loss, None
    dls = expit(s) - is_pos[:, None]  # sigmoid(s)-1 for positives, sigmoid(s) for negatives
    dls_rows = np.repeat(dls, K, axis=1)  # (P, K*L)
    coef_w = dls_rows * (1.0 - A * A) * C
    coef_q = dls_rows * (1.0 - C * C) * A
    grad = coef_w.T @ Vw + coef_q.T @ Vq
    return loss, grad


def index_update_loss(family: HashFamily, batch: PairBatch) -> float:
    """Per-table logistic loss over relaxed codes, summed over balanced pairs."""
    Vw, Vq, is_pos = _gather(batch)
    loss, _ = _pair_terms(family.theta, Vw, Vq, is_pos, family.K, family.L, want_grad=False)
    return loss


def index_update_grad(family: HashFamily, batch: PairBatch) -> np.ndarray:
    """Gradient of index_update_loss w.r.t. the hyperplane matrix."""
    Vw, Vq, is_pos = _gather(batch)
    _, grad = _pair_terms(family.theta, Vw, Vq, is_pos, family.K, family.L, want_grad=True)
    return grad


def any_table_collision(family: HashFamily, X: np.ndarray, Y: np.ndarray) -> float:
    """Fraction of pairs sharing a bucket in at least one table.

    This is the quantity pair mining actually drives (a pair is retrieved iff
    any table's keys match), so the round curves use it; the per-table
    average is metrics.collision_probability.
    """
    if X is None or len(X) == 0:
        return float("nan")
    kx = simhash.hash_keys_batch(family, X)
    ky = simhash.hash_keys_batch(family, Y)
    return float(np.mean(np.any(kx == ky, axis=1)))


@dataclass
class RoundStats:
    """State of the family *entering* the round, so row 1 is the random init."""

    round: int
    num_pos: int
    num_neg: int
    g: int
    loss: float  # mean per-pair loss on the balanced batch
    pos_collision: float
    neg_collision: float
    label_recall: float
    mean_sample_size: float

    CSV_FIELDS = (
        "round",
        "num_pos",
        "num_neg",
        "g",
        "loss",
        "pos_collision",
        "neg_collision",
        "label_recall",
        "mean_sample_size",
    )

    def csv_row(self):
        return [getattr(self, f) for f in self.CSV_FIELDS]


def _build_probe_pairs(model, train_data, Q, t1s, t2s, config):
    """Fixed pair population for collision-trend logging.

    Mined positives never collide at the moment they are collected (missing
    from every bucket is what makes them positives), so per-round curves are
    measured on this stable set instead: all (q, label) pairs above t1, and
    sampled (q, non-label) pairs below t2.
    """
    W, b = model.W, model.b
    ex_rows = []
    lab_cols = []
    for i in range(len(train_data)):
        for y in train_data[i].labels:
            ex_rows.append(i)
            lab_cols.append(y)
    ex_rows = np.array(ex_rows, dtype=np.int64)
    lab_cols = np.array(lab_cols, dtype=np.int64)
    zl = np.einsum("ph,ph->p", W[lab_cols], Q[ex_rows]) + b[lab_cols]
    keep = zl > t1s[ex_rows]
    pos = np.stack([ex_rows[keep], lab_cols[keep]], axis=1)

    rng = np.random.default_rng(config.seed + 101)
    if len(pos) > config.max_probe_pairs:
        pick = np.sort(rng.choice(len(pos), size=config.max_probe_pairs, replace=False))
        pos = pos[pick]

    m = model.num_classes
    neg_rows = []
    neg_cols = []
    target = min(config.max_probe_pairs, max(len(pos), 1) * 2)
    attempts = 0
    while len(neg_rows) < target and attempts < 20:
        attempts += 1
        cand_i = rng.integers(0, len(train_data), size=target)
        cand_j = rng.integers(0, m, size=target)
        zc = np.einsum("ph,ph->p", W[cand_j], Q[cand_i]) + b[cand_j]
        ok = zc < t2s[cand_i]
        for i, j, o in zip(cand_i, cand_j, ok):
            if o and int(j) not in train_data[int(i)].label_set:
                neg_rows.append(int(i))
                neg_cols.append(int(j))
                if len(neg_rows) == target:
                    break
    neg = np.stack([np.array(neg_rows, np.int64), np.array(neg_cols, np.int64)], axis=1) if neg_rows else _empty_pairs()
    return pos, neg


def preprocess(index: HashIndex, model: BaseModel, train_data, config: HashTrainConfig):
    """Alternate pair mining, hyperplane SGD, and table rebuilds.

    Returns (final index, final family, per-round stats). Each SGD step
    applies lr/minibatch times the summed pair gradient, so per-pair
    influence is constant even on ragged batches. A non-finite loss aborts
    with NumericError.
    """
    X = train_data.feature_matrix()
    Q = model.embed_batch(X)
    t1s, t2s = resolve_thresholds(model, Q, config)
    qaug = simhash.augment_queries(Q)
    naug = simhash.augment_neurons(model.W, model.b)

    probe_pos, probe_neg = _build_probe_pairs(model, train_data, Q, t1s, t2s, config)
    probe_pos_q = qaug[probe_pos[:, 0]] if len(probe_pos) else None
    probe_pos_w = naug[probe_pos[:, 1]] if len(probe_pos) else None
    probe_neg_q = qaug[probe_neg[:, 0]] if len(probe_neg) else None
    probe_neg_w = naug[probe_neg[:, 1]] if len(probe_neg) else None

    current = index
    # row norms never affect keys; start from the normalized representative
    theta = unit_rows(index.family.theta.astype(np.float64))
    rng = np.random.default_rng(config.seed)
    log = []
    for r in range(1, config.rounds + 1):
        family = current.family
        batch = collect_pairs(
            current, model, train_data, config, queries=Q, thresholds=(t1s, t2s), seed=config.seed + r
        )
        loss = index_update_loss(family, batch) / max(1, 2 * batch.g)
        pos_col = any_table_collision(family, probe_pos_q, probe_pos_w)
        neg_col = any_table_collision(family, probe_neg_q, probe_neg_w)
        log.append(
            RoundStats(
                round=r,
                num_pos=batch.num_pos_collected,
                num_neg=batch.num_neg_collected,
                g=batch.g,
                loss=loss,
                pos_collision=pos_col,
                neg_collision=neg_col,
                label_recall=batch.label_recall,
                mean_sample_size=batch.mean_sample_size,
            )
        )
        if batch.g == 0 or config.lr == 0:
            continue  # no training signal or frozen lr; index unchanged this round

        Vw, Vq, is_pos = _gather(batch)
        total = len(Vw)
        for _ in range(config.epochs):
            perm = rng.permutation(total)
            for start in range(0, total, config.minibatch):
                mb = perm[start : start + config.minibatch]
                step_loss, grad = _pair_terms(theta, Vw[mb], Vq[mb], is_pos[mb], family.K, family.L, want_grad=True)
                if not np.isfinite(step_loss):
                    raise NumericError(f"non-finite hash-training loss in round {r}")
                # normalize by the configured size, not len(mb): per-pair
                # influence stays lr/minibatch even on ragged late batches
                theta -= (config.lr / config.minibatch) * grad
                theta = unit_rows(theta)

        new_family = HashFamily(theta.astype(np.float32), family.K, family.L)
        current = tables.rebuild(current, new_family, model.W, model.b)
    return current, current.family, log
