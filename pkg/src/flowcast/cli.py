"""Command-line driver: gen-data, train, lr-search, evaluate, benchmark,
bench-kernels.

Settings come from an optional JSON config file (--config) merged with
command-line flags; flags win, unknown config keys are rejected. The
FLOWCAST_SEED environment variable supplies the seed when neither source
sets one.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import backend, bench, datagen, distributed, evaluation, layers, pipeline, training
from .errors import FlowcastError
from .ioutil import atomic_write_json, atomic_write_text


def _env_seed():
    raw = os.environ.get("FLOWCAST_SEED")
    return int(raw) if raw else 0


def _merge_config(args, defaults):
    """defaults < JSON config < explicit flags; unknown config keys rejected."""
    merged = dict(defaults)
    if args.config:
        with open(args.config) as f:
            file_cfg = json.load(f)
        unknown = sorted(set(file_cfg) - set(defaults))
        if unknown:
            raise FlowcastError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged.get("seed") is None:
        merged["seed"] = _env_seed()
    return argparse.Namespace(**merged)


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="global seed (default: FLOWCAST_SEED or 0)")


GEN_DEFAULTS = {
    "seed": None, "cases": 40, "states": 120, "grid": 16, "dt": 0.05, "nu": 0.08,
    "write_interval": 10, "inlet_min": 0.2, "inlet_max": 1.0,
    "recirc_min": 0.0, "recirc_max": 0.5, "out": "dataset.bin",
}

TRAIN_DEFAULTS = {
    "seed": None, "data": None, "out_dir": ".", "epochs": 100, "batch_size": 1,
    "lr": 0.00025, "min_delta": 0.0001, "patience": 10, "clip_norm": None,
    "replicas": 1, "workers": 1, "queue_capacity": 8,
}

SEARCH_DEFAULTS = {
    "seed": None, "data": None, "out_dir": ".", "sessions": 10,
    "lr_min": 1e-7, "lr_max": 1e-5, "epochs": 100, "batch_size": 1,
    "min_delta": 0.0001, "patience": 10,
}

EVAL_DEFAULTS = {
    "seed": None, "data": None, "checkpoint": None, "norm_stats": None,
    "steps": "10,20,100", "out": "metrics.json", "per_case": None,
}

BENCH_DEFAULTS = {
    "seed": None, "runs": 5, "epochs": 4, "replicas": 1, "workers": 1,
    "sample_delay_us": 0.0, "features": 256, "samples_per_epoch": 200,
    "batch_size": 1, "variant": "single_loader", "sweep": None, "out": None,
}

KERNEL_DEFAULTS = {"seed": None, "features": 512, "iters": 200}


def build_parser():
    parser = argparse.ArgumentParser(prog="flowcast",
                                     description="LSTM surrogate training and benchmarking engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic tank-flow dataset")
    _add_common(p)
    p.add_argument("--cases", type=int)
    p.add_argument("--states", type=int)
    p.add_argument("--grid", type=int, help="square grid edge length in cells")
    p.add_argument("--dt", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--write-interval", type=int, dest="write_interval")
    p.add_argument("--inlet-min", type=float, dest="inlet_min")
    p.add_argument("--inlet-max", type=float, dest="inlet_max")
    p.add_argument("--recirc-min", type=float, dest="recirc_min")
    p.add_argument("--recirc-max", type=float, dest="recirc_max")
    p.add_argument("--out")

    p = sub.add_parser("train", help="train the surrogate on a dataset file")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--min-delta", type=float, dest="min_delta")
    p.add_argument("--patience", type=int)
    p.add_argument("--clip-norm", type=float, dest="clip_norm")
    p.add_argument("--replicas", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--queue-capacity", type=int, dest="queue_capacity")

    p = sub.add_parser("lr-search", help="multi-session random learning-rate search")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--sessions", type=int)
    p.add_argument("--lr-min", type=float, dest="lr_min")
    p.add_argument("--lr-max", type=float, dest="lr_max")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--min-delta", type=float, dest="min_delta")
    p.add_argument("--patience", type=int)

    p = sub.add_parser("evaluate", help="rollout metrics on the test split")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--norm-stats", required=True, dest="norm_stats")
    p.add_argument("--steps", help="comma-separated rollout steps")
    p.add_argument("--out")
    p.add_argument("--per-case", action="store_const", const=True, dest="per_case")

    p = sub.add_parser("benchmark", help="throughput benchmark / scaling sweep")
    _add_common(p)
    p.add_argument("--runs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--sample-delay-us", type=float, dest="sample_delay_us")
    p.add_argument("--features", type=int)
    p.add_argument("--samples-per-epoch", type=int, dest="samples_per_epoch")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--variant", choices=bench.VARIANTS)
    p.add_argument("--sweep", action="store_const", const=True,
                   help="run the full replica x variant sweep")
    p.add_argument("--out", help="write the report as JSON here")

    p = sub.add_parser("bench-kernels", help="compare compiled vs python kernel backends")
    _add_common(p)
    p.add_argument("--features", type=int)
    p.add_argument("--iters", type=int)

    return parser


def cmd_gen_data(ns):
    cfg = datagen.TankConfig(grid_h=ns.grid, grid_w=ns.grid, dt=ns.dt, nu=ns.nu,
                             write_interval=ns.write_interval, n_states=ns.states)
    dataset = datagen.generate_dataset(
        ns.cases, (ns.inlet_min, ns.inlet_max), (ns.recirc_min, ns.recirc_max), cfg, seed=ns.seed)
    datagen.write_dataset(ns.out, dataset)
    print(f"wrote {ns.out}: shape {'x'.join(map(str, dataset.shape))}")
    return 0


def _load_splits(path, seed):
    dataset = datagen.read_dataset(path)
    split = pipeline.split_cases(len(dataset.cases), seed)
    stats = pipeline.compute_norm_stats([dataset.cases[i] for i in split.train])
    train = pipeline.dataset_windows(dataset, split.train, stats)
    val = pipeline.dataset_windows(dataset, split.val, stats)
    return dataset, split, stats, train, val


def cmd_train(ns):
    dataset, split, stats, train, val = _load_splits(ns.data, ns.seed)
    n_features = train[0].input.shape[1]
    model = layers.init_model(layers.ModelConfig(n_features=n_features), seed=ns.seed)
    cfg = training.TrainConfig(epochs=ns.epochs, batch_size=ns.batch_size, lr=ns.lr,
                               seed=ns.seed, min_delta=ns.min_delta, patience=ns.patience,
                               clip_norm=ns.clip_norm)
    loader_cfg = distributed.LoaderConfig(workers=ns.workers, queue_capacity=ns.queue_capacity)
    model, history = distributed.fit_data_parallel(model, train, val, cfg,
                                                   replicas=ns.replicas, loader_cfg=loader_cfg)
    os.makedirs(ns.out_dir, exist_ok=True)
    layers.save_checkpoint(os.path.join(ns.out_dir, "model.fcm"), model)
    stats.to_json(os.path.join(ns.out_dir, "norm_stats.json"))
    training.write_history(os.path.join(ns.out_dir, "history.jsonl"), history)
    print(f"trained {len(history)} epochs; best val loss "
          f"{min(h['val_loss'] for h in history):.6f}; artifacts in {ns.out_dir}")
    return 0


def cmd_lr_search(ns):
    dataset, split, stats, train, val = _load_splits(ns.data, ns.seed)
    n_features = train[0].input.shape[1]
    cfg = training.TrainConfig(epochs=ns.epochs, batch_size=ns.batch_size, seed=ns.seed,
                               min_delta=ns.min_delta, patience=ns.patience)
    model, records = training.lr_search(
        layers.ModelConfig(n_features=n_features), train, val, cfg,
        n_sessions=ns.sessions, lr_range=(ns.lr_min, ns.lr_max), seed=ns.seed,
        progress=lambda rec: print(
            f"session {rec['session']}: lr={rec['lr']:.2e} "
            f"best_val={rec['best_val_loss']:.6f} epochs={rec['epochs_run']}"),
    )
    os.makedirs(ns.out_dir, exist_ok=True)
    layers.save_checkpoint(os.path.join(ns.out_dir, "model.fcm"), model)
    stats.to_json(os.path.join(ns.out_dir, "norm_stats.json"))
    atomic_write_json(os.path.join(ns.out_dir, "lr_search.json"), records)
    best = min(records, key=lambda r: r["best_val_loss"])
    print(f"best session {best['session']} (lr={best['lr']:.2e}, "
          f"val={best['best_val_loss']:.6f}); artifacts in {ns.out_dir}")
    return 0


def cmd_evaluate(ns):
    dataset = datagen.read_dataset(ns.data)
    split = pipeline.split_cases(len(dataset.cases), ns.seed)
    stats = pipeline.NormStats.from_json(ns.norm_stats)
    model = layers.load_checkpoint(ns.checkpoint)
    steps = [int(s) for s in str(ns.steps).split(",")]
    test_cases = [dataset.cases[i] for i in split.test]
    report = evaluation.evaluate_at_steps(model, test_cases, stats, steps=steps,
                                          per_case=bool(ns.per_case))
    if ns.per_case:
        report, breakdown = report
    report.write_json(ns.out)
    print(report.format_table())
    if ns.per_case:
        for case, rows in breakdown.items():
            for r in rows:
                print(f"case {case} step {r.step}: pearson={r.pearson:.3f} "
                      f"spearman={r.spearman:.3f} rmse={r.rmse:.4f}")
    return 0


def cmd_benchmark(ns):
    cfg = bench.BenchConfig(
        n_features=ns.features, samples_per_epoch=ns.samples_per_epoch,
        batch_size=ns.batch_size, replicas=ns.replicas, workers=ns.workers,
        per_sample_delay=ns.sample_delay_us * 1e-6, variant=ns.variant, seed=ns.seed)
    if ns.sweep:
        table = bench.scaling_sweep(cfg, runs=ns.runs, epochs=ns.epochs)
        print(bench.format_sweep_table(table))
        if ns.out:
            bench.write_sweep_json(ns.out, table)
    else:
        report = bench.run_benchmark(cfg, runs=ns.runs, epochs=ns.epochs)
        print(f"throughput: {report.format_cell()} samples/s")
        if ns.out:
            atomic_write_json(ns.out, report.to_json_obj())
    return 0


def cmd_bench_kernels(ns):
    results = bench.kernel_benchmark(n_features=ns.features, iters=ns.iters)
    print(f"active backend: {backend.ACTIVE}")
    for name, rate in results.items():
        print(f"{name:>10}: {rate:.1f} fwd+bwd iterations/s")
    if len(results) > 1 and "python" in results and "compiled" in results:
        print(f"speedup: {results['compiled'] / results['python']:.2f}x")
    return 0


COMMANDS = {
    "gen-data": (GEN_DEFAULTS, cmd_gen_data),
    "train": (TRAIN_DEFAULTS, cmd_train),
    "lr-search": (SEARCH_DEFAULTS, cmd_lr_search),
    "evaluate": (EVAL_DEFAULTS, cmd_evaluate),
    "benchmark": (BENCH_DEFAULTS, cmd_benchmark),
    "bench-kernels": (KERNEL_DEFAULTS, cmd_bench_kernels),
}


def run_cli(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    defaults, handler = COMMANDS[args.command]
    try:
        ns = _merge_config(args, defaults)
        return handler(ns)
    except FlowcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
