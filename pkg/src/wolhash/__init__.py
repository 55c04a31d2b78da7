"""Learned locality-sensitive hash retrieval over wide output layers.

A trained base network's last hidden activation queries L sign-projection
hash tables built over the output neurons; only the retrieved neurons are
scored at inference. The hyperplanes are trainable from retrieval feedback so
the tables keep label neurons and shed the rest.
"""

from .dataset import LabeledExample, SparseDataset, SparseVector, generate_synthetic, parse_dataset, split
from .engine import Prediction, energy_proxy, infer_batch, infer_one
from .hashtrain import HashTrainConfig, PairBatch, collect_pairs, index_update_grad, index_update_loss, preprocess
from .metrics import EvalReport, collision_probability, label_recall, label_rank_stats, precision_at_k
from .model import BaseModel, TrainConfig, grad_check, load_model, save_model, train
from .simhash import HashFamily, analytic_collision, hash_keys, init_random, relaxed_codes
from .tables import HashIndex, bucket_stats, build, query, rebuild

__all__ = [
    "BaseModel",
    "EvalReport",
    "HashFamily",
    "HashIndex",
    "HashTrainConfig",
    "LabeledExample",
    "PairBatch",
    "Prediction",
    "SparseDataset",
    "SparseVector",
    "TrainConfig",
    "analytic_collision",
    "bucket_stats",
    "build",
    "collect_pairs",
    "collision_probability",
    "energy_proxy",
    "generate_synthetic",
    "grad_check",
    "hash_keys",
    "index_update_grad",
    "index_update_loss",
    "infer_batch",
    "infer_one",
    "init_random",
    "label_recall",
    "label_rank_stats",
    "load_model",
    "parse_dataset",
    "precision_at_k",
    "preprocess",
    "query",
    "rebuild",
    "relaxed_codes",
    "save_model",
    "split",
    "train",
]

__version__ = "0.1.0"
