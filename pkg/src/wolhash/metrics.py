"""Evaluation metrics: precision@k, label recall, collision probability, and
label-rank statistics, plus the serializable per-run report."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import simhash
from .simhash import HashFamily


def precision_at_k(topk_ids, labels, k: int) -> float:
    """Mean over examples of |top-k ids in y| / k.

    Predictions shorter than k count the missing slots as wrong.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(topk_ids) != len(labels):
        raise ValueError("predictions and labels are not aligned")
    if not topk_ids:
        return float("nan")
    total = 0.0
    for ids, y in zip(topk_ids, labels):
        y = set(y)
        total += sum(1 for i in list(ids)[:k] if int(i) in y) / k
    return total / len(topk_ids)


def label_recall(retrieved_sets, labels) -> float:
    """Mean over examples of |S intersect y| / |y|; label-side recall.

    Examples with an empty label set are skipped.
    """
    if len(retrieved_sets) != len(labels):
        raise ValueError("retrieved sets and labels are not aligned")
    total = 0.0
    count = 0
    for S, y in zip(retrieved_sets, labels):
        y = set(y)
        if not y:
            continue
        S = set(int(i) for i in S)
        total += len(S & y) / len(y)
        count += 1
    return total / count if count else float("nan")


def collision_probability(family: HashFamily, X, Y) -> float:
    """Fraction of (pair, table) events whose full K-bit keys match.

    X and Y are aligned stacks of augmented points (or two single points).
    """
    X = np.atleast_2d(np.asarray(X))
    Y = np.atleast_2d(np.asarray(Y))
    if X.shape != Y.shape:
        raise ValueError("point stacks must be aligned")
    if X.shape[0] == 0:
        return float("nan")
    kx = simhash.hash_keys_batch(family, X)
    ky = simhash.hash_keys_batch(family, Y)
    return float(np.mean(kx == ky))


@dataclass
class RankStats:
    mean_rank: float  # non-retrieved labels enter at rank |S|+1
    median_rank: float
    num_ranks: int
    num_missing: int  # labels absent from the retrieved set (sparse mode only)
    mean_rank_retrieved: float = float("nan")  # mean over retrieved labels only


def label_rank_stats(model, dataset, retrieved_sets=None, chunk: int = 256) -> RankStats:
    """Competition rank (ties share the lowest rank) of each label's logit.

    Full mode ranks within all m neurons; with retrieved_sets given, ranks are
    computed within each example's set and non-retrieved labels are assigned
    rank |S|+1 and counted in num_missing.
    """
    X = dataset.feature_matrix()
    ranks = []
    retrieved_ranks = []
    missing = 0
    for start in range(0, len(dataset), chunk):
        Q = model.embed_batch(X[start : start + chunk])
        for i in range(Q.shape[0]):
            ex = dataset[start + i]
            if not ex.labels:
                continue
            if retrieved_sets is None:
                z = model.full_logits(Q[i])
                for y in ex.labels:
                    r = 1 + int(np.sum(z > z[y]))
                    ranks.append(r)
                    retrieved_ranks.append(r)
            else:
                S = np.asarray(retrieved_sets[start + i], dtype=np.int64)
                z = model.logits_subset(Q[i], S)
                pos = {int(s): j for j, s in enumerate(S)}
                for y in ex.labels:
                    if y in pos:
                        r = 1 + int(np.sum(z > z[pos[y]]))
                        ranks.append(r)
                        retrieved_ranks.append(r)
                    else:
                        ranks.append(len(S) + 1)
                        missing += 1
    if not ranks:
        return RankStats(float("nan"), float("nan"), 0, 0)
    arr = np.array(ranks, dtype=np.float64)
    mean_retrieved = float(np.mean(retrieved_ranks)) if retrieved_ranks else float("nan")
    return RankStats(float(arr.mean()), float(np.median(arr)), len(ranks), missing, mean_retrieved)


@dataclass
class EvalReport:
    """One evaluation run; wall-time fields are kept out of the deterministic dump."""

    mode: str
    p_at: dict = field(default_factory=dict)  # k -> precision
    label_recall: float = float("nan")
    mean_sample_size: float = float("nan")
    mean_label_rank: float = float("nan")
    pos_collision: float = float("nan")
    neg_collision: float = float("nan")
    wall_time_per_1000: float = float("nan")
    energy_proxy_per_1000: float = float("nan")

    def data_dict(self) -> dict:
        """Deterministic fields only (excludes wall-clock time)."""
        return {
            "mode": self.mode,
            "p_at": {str(k): self.p_at[k] for k in sorted(self.p_at)},
            "label_recall": self.label_recall,
            "mean_sample_size": self.mean_sample_size,
            "mean_label_rank": self.mean_label_rank,
            "pos_collision": self.pos_collision,
            "neg_collision": self.neg_collision,
            "energy_proxy_per_1000": self.energy_proxy_per_1000,
        }

    def timing_dict(self) -> dict:
        return {"mode": self.mode, "wall_time_per_1000": self.wall_time_per_1000}

    def to_json(self) -> str:
        return json.dumps(self.data_dict(), sort_keys=True, indent=2) + "\n"

    def csv_fields(self) -> dict:
        row = {"mode": self.mode}
        for k in sorted(self.p_at):
            row[f"p_at_{k}"] = self.p_at[k]
        row.update(
            label_recall=self.label_recall,
            mean_sample_size=self.mean_sample_size,
            mean_label_rank=self.mean_label_rank,
            pos_collision=self.pos_collision,
            neg_collision=self.neg_collision,
            wall_time_per_1000=self.wall_time_per_1000,
            energy_proxy_per_1000=self.energy_proxy_per_1000,
        )
        return row


def write_reports_csv(reports, path) -> None:
    """All reports as one CSV, one row per mode."""
    rows = [r.csv_fields() for r in reports]
    fields = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
