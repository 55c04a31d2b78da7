"""Command-line entry points for reproducible experiments.

Subcommands: gen-data, train-model, build-index, train-index, infer,
sweep-kl. Settings come from an optional key = value config file, overridden
by repeated --set key=value flags and the common flags below; every command
is deterministic given (config, seed), with wall-clock measurements
segregated into timings_*.json / comparison.csv so the remaining outputs can
be hashed.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import engine, fileio, hashtrain, metrics, simhash, tables
from .model import NumericError, TrainConfig, load_model, save_model, train

# Seed streams derived from the experiment seed.
SEED_SPLIT = 1
SEED_MODEL = 2
SEED_FAMILY = 3
SEED_INDEX_TRAIN = 4
SEED_EVAL = 5


class UsageError(Exception):
    """Bad configuration or unresolvable input path (exit code 2)."""


DEFAULTS = {
    "data": "synthetic",  # "synthetic" or a dataset file path
    "classes": "64",
    "input_dim": "512",
    "examples": "2048",
    "labels_per_example": "1",
    "noise": "0.1",
    "train_fraction": "0.8",
    "hidden": "128",
    "model_epochs": "10",
    "model_lr": "4.0",
    "model_batch": "64",
    "model_loss": "softmax",
    "bits": "4",
    "num_tables": "4",
    "t1": "p85",
    "t2": "p50",
    "index_lr": "0.5",
    "index_epochs": "4",
    "index_minibatch": "256",
    "rounds": "8",
    "eval_ks": "1,5",
    "modes": "full,learned-hash,random-hash",
    "seed": "0",
    "threads": "",
    "joules_per_mac": "1e-9",
    "sweep_bits": "4,6,8",
    "sweep_tables": "1,2,4",
}


def load_config(path):
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = value.strip()
    return cfg


def apply_overrides(cfg, args):
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        cfg[key] = value.strip()
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.threads is not None:
        cfg["threads"] = str(args.threads)
    return cfg


def _get_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise UsageError(f"config {key} must be an integer, got {cfg[key]!r}") from None


def _get_float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise UsageError(f"config {key} must be a number, got {cfg[key]!r}") from None


def _get_int_list(cfg, key):
    try:
        return [int(t) for t in cfg[key].split(",") if t.strip() != ""]
    except ValueError:
        raise UsageError(f"config {key} must be a comma list of integers") from None


def _threads(cfg):
    if cfg["threads"].strip():
        return max(1, _get_int(cfg, "threads"))
    env = os.environ.get("WOLHASH_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"WOLHASH_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def load_dataset(cfg):
    if cfg["data"] == "synthetic":
        return ds.generate_synthetic(
            num_classes=_get_int(cfg, "classes"),
            input_dim=_get_int(cfg, "input_dim"),
            num_examples=_get_int(cfg, "examples"),
            classes_per_example=_get_int(cfg, "labels_per_example"),
            noise=_get_float(cfg, "noise"),
            seed=_get_int(cfg, "seed"),
        )
    if not os.path.exists(cfg["data"]):
        raise UsageError(f"dataset path not found: {cfg['data']}")
    return ds.parse_dataset(cfg["data"])


def split_dataset(cfg, data):
    return ds.split(data, _get_float(cfg, "train_fraction"), _get_int(cfg, "seed") + SEED_SPLIT)


def _require(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path} (run the producing command first)")
    return path


def _hash_train_config(cfg):
    try:
        return hashtrain.HashTrainConfig(
            t1=cfg["t1"],
            t2=cfg["t2"],
            lr=_get_float(cfg, "index_lr"),
            epochs=_get_int(cfg, "index_epochs"),
            minibatch=_get_int(cfg, "index_minibatch"),
            rounds=_get_int(cfg, "rounds"),
            seed=_get_int(cfg, "seed") + SEED_INDEX_TRAIN,
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _model_config(cfg):
    try:
        return TrainConfig(
            hidden=_get_int(cfg, "hidden"),
            epochs=_get_int(cfg, "model_epochs"),
            lr=_get_float(cfg, "model_lr"),
            batch=_get_int(cfg, "model_batch"),
            seed=_get_int(cfg, "seed") + SEED_MODEL,
            loss=cfg["model_loss"],
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def _init_family(cfg, hidden):
    try:
        return simhash.init_random(
            _get_int(cfg, "bits"), _get_int(cfg, "num_tables"), hidden, _get_int(cfg, "seed") + SEED_FAMILY
        )
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_gen_data(cfg, out):
    if cfg["data"] != "synthetic":
        raise UsageError("gen-data only makes sense with data = synthetic")
    data = load_dataset(cfg)
    path = os.path.join(out, "dataset.txt")
    ds.serialize_dataset(data, path)
    print(f"wrote {path}: {len(data)} examples, input_dim {data.input_dim}, classes {data.num_classes}")
    return 0


def cmd_train_model(cfg, out):
    data = load_dataset(cfg)
    train_data, _ = split_dataset(cfg, data)
    if len(train_data) == 0:
        raise UsageError("train split is empty")

    def on_epoch(epoch, loss, p1):
        print(f"epoch {epoch}: loss {loss:.6f} train_p@1 {p1:.4f}")

    model = train(train_data, _model_config(cfg), on_epoch=on_epoch)
    path = os.path.join(out, "model.bin")
    save_model(model, path)
    print(f"wrote {path}")
    return 0


def cmd_build_index(cfg, out):
    model = load_model(_require(os.path.join(out, "model.bin"), "model file"))
    family = _init_family(cfg, model.hidden)
    try:
        index = tables.build(family, model.W, model.b)
    except ValueError as e:
        raise UsageError(str(e)) from None
    path = os.path.join(out, "index_random.bin")
    tables.save_index(index, path)
    print(tables.bucket_stats(index).summary())
    print(f"wrote {path}")
    return 0


def cmd_train_index(cfg, out):
    model = load_model(_require(os.path.join(out, "model.bin"), "model file"))
    random_path = os.path.join(out, "index_random.bin")
    if os.path.exists(random_path):
        index = tables.load_index(random_path)
    else:
        index = tables.build(_init_family(cfg, model.hidden), model.W, model.b)
        tables.save_index(index, random_path)
    data = load_dataset(cfg)
    train_data, _ = split_dataset(cfg, data)

    index, _, log = hashtrain.preprocess(index, model, train_data, _hash_train_config(cfg))

    trained_path = os.path.join(out, "index_trained.bin")
    tables.save_index(index, trained_path)
    rounds_path = os.path.join(out, "rounds.csv")
    with open(rounds_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(hashtrain.RoundStats.CSV_FIELDS)
        for row in log:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.csv_row()])
    for row in log:
        print(
            f"round {row.round}: pos {row.num_pos} neg {row.num_neg} g {row.g} "
            f"loss {row.loss:.4f} pos_col {row.pos_collision:.4f} neg_col {row.neg_collision:.4f} "
            f"recall {row.label_recall:.4f} mean|S| {row.mean_sample_size:.1f}"
        )
    print(f"wrote {trained_path} and {rounds_path}")
    return 0


def _collision_probe(model, test_data, Q, family, seed):
    """Report-time collision diagnostics: all (q, label) pairs vs an equal
    number of seeded random (q, non-label) pairs."""
    qaug = simhash.augment_queries(Q)
    naug = simhash.augment_neurons(model.W, model.b)
    rows, cols = [], []
    for i in range(len(test_data)):
        for y in test_data[i].labels:
            rows.append(i)
            cols.append(y)
    if not rows:
        return float("nan"), float("nan")
    pos = metrics.collision_probability(family, qaug[rows], naug[cols])
    rng = np.random.default_rng(seed)
    neg_rows, neg_cols = [], []
    while len(neg_rows) < len(rows):
        i = int(rng.integers(0, len(test_data)))
        j = int(rng.integers(0, model.num_classes))
        if j not in test_data[i].label_set:
            neg_rows.append(i)
            neg_cols.append(j)
    neg = metrics.collision_probability(family, qaug[neg_rows], naug[neg_cols])
    return pos, neg


def cmd_infer(cfg, out):
    model = load_model(_require(os.path.join(out, "model.bin"), "model file"))
    data = load_dataset(cfg)
    _, test_data = split_dataset(cfg, data)
    if len(test_data) == 0:
        raise UsageError("test split is empty")

    modes = [m.strip() for m in cfg["modes"].split(",") if m.strip()]
    for m in modes:
        if m not in engine.MODES:
            raise UsageError(f"unknown mode {m!r}; valid: {', '.join(engine.MODES)}")
    eval_ks = _get_int_list(cfg, "eval_ks")
    if not eval_ks or any(k < 1 for k in eval_ks):
        raise UsageError("eval_ks must be positive integers")
    k_pred = max(eval_ks)
    threads = _threads(cfg)
    jpm = _get_float(cfg, "joules_per_mac")
    seed = _get_int(cfg, "seed")

    indexes = {}
    if "random-hash" in modes:
        indexes["random-hash"] = tables.load_index(_require(os.path.join(out, "index_random.bin"), "random index"))
    if "learned-hash" in modes:
        indexes["learned-hash"] = tables.load_index(_require(os.path.join(out, "index_trained.bin"), "trained index"))

    X = test_data.feature_matrix()
    Q = model.embed_batch(X)
    labels = test_data.label_sets()

    reports = []
    for mode in modes:
        index = indexes.get(mode)
        result = engine.infer_batch(model, index, Q, k_pred, mode=mode, threads=threads, keep_retrieved=True)
        topk = [p.ids for p in result.predictions]
        report = metrics.EvalReport(mode=mode)
        report.p_at = {k: metrics.precision_at_k(topk, labels, k) for k in eval_ks}
        if mode == "full":
            report.label_recall = 1.0
            rank = metrics.label_rank_stats(model, test_data)
        else:
            report.label_recall = metrics.label_recall(result.retrieved, labels)
            rank = metrics.label_rank_stats(model, test_data, retrieved_sets=result.retrieved)
        report.mean_label_rank = rank.mean_rank
        report.mean_sample_size = result.stats.mean_sample_size
        if index is not None:
            report.pos_collision, report.neg_collision = _collision_probe(
                model, test_data, Q, index.family, seed + SEED_EVAL
            )
        report.wall_time_per_1000 = result.stats.time_per_1000()
        report.energy_proxy_per_1000 = result.stats.energy_per_1000(jpm)
        reports.append(report)

        with open(os.path.join(out, f"report_{mode}.json"), "w") as f:
            f.write(report.to_json())
        with open(os.path.join(out, f"timings_{mode}.json"), "w") as f:
            json.dump(report.timing_dict(), f, sort_keys=True, indent=2)
            f.write("\n")
        engine.write_predictions_csv(os.path.join(out, f"predictions_{mode}.csv"), result.predictions)
        print(
            f"{mode}: p@{{{','.join(map(str, eval_ks))}}} = "
            f"{', '.join(f'{report.p_at[k]:.4f}' for k in eval_ks)}; "
            f"recall {report.label_recall:.4f}; mean|S| {report.mean_sample_size:.1f}; "
            f"time/1000 {report.wall_time_per_1000:.4f}s; energy/1000 {report.energy_proxy_per_1000:.4g}J"
        )

    _write_comparison(os.path.join(out, "comparison.csv"), reports, eval_ks)
    return 0


def _write_comparison(path, reports, eval_ks):
    rows = [("p_at_%d" % k, lambda r, k=k: r.p_at.get(k)) for k in eval_ks]
    rows += [
        ("mean_sample_size", lambda r: r.mean_sample_size),
        ("label_recall", lambda r: r.label_recall),
        ("mean_label_rank", lambda r: r.mean_label_rank),
        ("time_per_1000_s", lambda r: r.wall_time_per_1000),
        ("energy_proxy_per_1000", lambda r: r.energy_proxy_per_1000),
    ]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["metric"] + [r.mode for r in reports])
        for name, get in rows:
            writer.writerow([name] + [get(r) for r in reports])


def cmd_sweep_kl(cfg, out, bits_list=None, tables_list=None):
    model = load_model(_require(os.path.join(out, "model.bin"), "model file"))
    data = load_dataset(cfg)
    train_data, test_data = split_dataset(cfg, data)
    if len(test_data) == 0:
        raise UsageError("test split is empty")
    bits_list = bits_list or _get_int_list(cfg, "sweep_bits")
    tables_list = tables_list or _get_int_list(cfg, "sweep_tables")
    if not bits_list or not tables_list:
        raise UsageError("sweep lists must be non-empty")
    rounds = _get_int(cfg, "rounds")
    threads = _threads(cfg)
    seed = _get_int(cfg, "seed")
    labels = test_data.label_sets()
    Q = model.embed_batch(test_data.feature_matrix())

    grid = []
    for K in bits_list:
        try:
            master = simhash.init_random(K, max(tables_list), model.hidden, seed + SEED_FAMILY)
        except ValueError as e:
            raise UsageError(str(e)) from None
        for L in tables_list:
            family = simhash.HashFamily(master.theta[: K * L].copy(), K, L)
            index = tables.build(family, model.W, model.b)
            mode = "random-hash"
            if rounds > 0:
                hcfg = _hash_train_config(cfg)
                index, _, _ = hashtrain.preprocess(index, model, train_data, hcfg)
                mode = "learned-hash"
            result = engine.infer_batch(model, index, Q, 5, mode=mode, threads=threads, keep_retrieved=True)
            mean_s = result.stats.mean_sample_size
            if mean_s == 0:
                p1 = p5 = "NA"
            else:
                topk = [p.ids for p in result.predictions]
                p1 = metrics.precision_at_k(topk, labels, 1)
                p5 = metrics.precision_at_k(topk, labels, 5)
            grid.append((K, L, p1, p5, mean_s))
            print(f"K={K} L={L}: p@1 {p1} p@5 {p5} mean|S| {mean_s:.1f}")

    path = os.path.join(out, "sweep.csv")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bits", "num_tables", "p_at_1", "p_at_5", "mean_sample_size"])
        writer.writerows(grid)
    print(f"wrote {path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="wolhash", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--threads", type=int, help="worker thread count (default: WOLHASH_THREADS or cores)")

    for name in ("gen-data", "train-model", "build-index", "train-index", "infer"):
        add_common(sub.add_parser(name))
    sweep = sub.add_parser("sweep-kl")
    add_common(sweep)
    sweep.add_argument("--bits-list", help="comma list of K values (default: config sweep_bits)")
    sweep.add_argument("--tables-list", help="comma list of L values (default: config sweep_tables)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        os.makedirs(args.out, exist_ok=True)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.out)
        if args.command == "train-model":
            return cmd_train_model(cfg, args.out)
        if args.command == "build-index":
            return cmd_build_index(cfg, args.out)
        if args.command == "train-index":
            return cmd_train_index(cfg, args.out)
        if args.command == "infer":
            return cmd_infer(cfg, args.out)
        if args.command == "sweep-kl":
            bits = [int(t) for t in args.bits_list.split(",")] if args.bits_list else None
            tabs = [int(t) for t in args.tables_list.split(",")] if args.tables_list else None
            return cmd_sweep_kl(cfg, args.out, bits, tabs)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ds.DataFormatError, fileio.FormatError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
