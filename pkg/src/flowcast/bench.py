"""Throughput benchmark harness: warm-up epoch, repeated runs, mean +/- std
samples/s, replica scaling sweep, and a small analytical scaling model."""

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .distributed import LoaderConfig, ShardSpec, shard_dataset, start_loader, step_groups
from .errors import ConfigError
from .ioutil import atomic_write_json
from .layers import ModelConfig, init_model
from .pipeline import SampleWindow
from .training import init_adam

VARIANTS = ("single_loader", "sharded_loaders")


class VirtualClock:
    """Deterministic clock for tests: time advances only via sleep()."""

    def __init__(self):
        self.now = 0.0

    def monotonic(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


class WallClock:
    monotonic = staticmethod(time.monotonic)
    sleep = staticmethod(time.sleep)


@dataclass
class BenchConfig:
    n_features: int = 256
    samples_per_epoch: int = 200
    batch_size: int = 1
    replicas: int = 1
    workers: int = 1
    queue_capacity: int = 8
    per_sample_delay: float = 0.0
    variant: str = "single_loader"
    lr: float = 0.00025
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.samples_per_epoch, self.replicas, self.workers, self.batch_size) < 1:
            raise ConfigError(f"invalid benchmark config {self}")


@dataclass
class ThroughputReport:
    per_run: List[float]
    config: dict = field(default_factory=dict)

    @property
    def mean(self):
        return float(np.mean(self.per_run))

    @property
    def std(self):
        """Sample (n-1) standard deviation; 0 for a single run."""
        if len(self.per_run) < 2:
            return 0.0
        return float(np.std(self.per_run, ddof=1))

    def format_cell(self):
        return f"{self.mean:.1f} ± {self.std:.2f}"

    def to_json_obj(self):
        return {"per_run": self.per_run, "mean": self.mean, "std": self.std, "config": self.config}


def synthetic_samples(cfg, model_config, rng):
    """Standard-normal random windows generated in memory, so storage I/O
    never contaminates the measurement."""
    xs = rng.standard_normal((cfg.samples_per_epoch, model_config.n_timesteps, cfg.n_features))
    ys = rng.standard_normal((cfg.samples_per_epoch, model_config.n_outputs, cfg.n_features))
    return [
        SampleWindow(xs[i].astype(np.float32), ys[i].astype(np.float32))
        for i in range(cfg.samples_per_epoch)
    ]


def _epoch_stream(samples, cfg):
    """Yield microbatch groups (R lists of batch_size samples) for one epoch."""
    if cfg.variant == "single_loader":
        streams = [iter(start_loader(samples, LoaderConfig(
            workers=cfg.workers, queue_capacity=cfg.queue_capacity,
            per_sample_delay=cfg.per_sample_delay, seed=cfg.seed)))]
        shards = [samples]
    else:
        shards = [
            shard_dataset(samples, ShardSpec(cfg.replicas, i)) for i in range(cfg.replicas)
        ]
        streams = [
            iter(start_loader(shard, LoaderConfig(
                workers=cfg.workers, queue_capacity=cfg.queue_capacity,
                per_sample_delay=cfg.per_sample_delay, seed=cfg.seed + i)))
            for i, shard in enumerate(shards) if shard
        ]

    def pull(stream, n):
        out = []
        for _ in range(n):
            out.append(next(stream, None))
        return [s for s in out if s is not None]

    if cfg.variant == "single_loader":
        stream = streams[0]
        while True:
            group = []
            for _ in range(cfg.replicas):
                mb = pull(stream, cfg.batch_size)
                if mb:
                    group.append(mb)
            if not group:
                return
            yield group
    else:
        active = list(streams)
        while active:
            group = []
            still = []
            for stream in active:
                mb = pull(stream, cfg.batch_size)
                if mb:
                    group.append(mb)
                    still.append(stream)
            active = still
            if group:
                yield group


def run_benchmark(cfg, runs=5, epochs=4, step_fn=None, clock=None, rng_seed=None):
    """Measure training throughput: per run, execute `epochs` epochs, treat
    the first as warm-up, and report samples/s over the remaining epochs.

    step_fn(group, epoch) replaces the real data-parallel training step when
    given (the dummy-trainer seam used by the timing tests).
    """
    if runs < 1 or epochs < 2:
        raise ConfigError("need runs >= 1 and epochs >= 2 (one warm-up + measured)")
    clock = clock or WallClock()
    model_config = ModelConfig(n_features=cfg.n_features)
    rng = np.random.default_rng(cfg.seed if rng_seed is None else rng_seed)
    samples = synthetic_samples(cfg, model_config, rng)
    per_run = []
    for run in range(runs):
        if step_fn is None:
            model = init_model(model_config, seed=cfg.seed + run)
            state = init_adam(model, lr=cfg.lr)
            def do_step(group, epoch, _m=model, _s=state):
                step_groups(_m, _s, [group])
        else:
            do_step = step_fn
        measured_samples = 0
        measured_time = 0.0
        for epoch in range(epochs):
            t0 = clock.monotonic()
            consumed = 0
            for group in _epoch_stream(samples, cfg):
                do_step(group, epoch)
                consumed += sum(len(mb) for mb in group)
            elapsed = clock.monotonic() - t0
            if epoch >= 1:
                measured_samples += consumed
                measured_time += elapsed
        if measured_time <= 0:
            raise ConfigError("measured epochs took zero time; cannot compute throughput")
        per_run.append(measured_samples / measured_time)
    return ThroughputReport(per_run=per_run, config={
        "replicas": cfg.replicas, "workers": cfg.workers, "batch_size": cfg.batch_size,
        "per_sample_delay": cfg.per_sample_delay, "variant": cfg.variant,
        "samples_per_epoch": cfg.samples_per_epoch, "runs": runs, "epochs": epochs,
    })


def scaling_sweep(base_cfg, replica_list=(1, 2, 4, 8, 16), variants=VARIANTS,
                  runs=5, epochs=4, step_fn=None, clock=None):
    """run_benchmark for every (replicas, variant) combination."""
    from dataclasses import replace

    table: Dict[str, Dict[int, ThroughputReport]] = {v: {} for v in variants}
    for variant in variants:
        for r in replica_list:
            cfg = replace(base_cfg, replicas=r, variant=variant)
            table[variant][r] = run_benchmark(cfg, runs=runs, epochs=epochs,
                                              step_fn=step_fn, clock=clock)
    return table


def format_sweep_table(table):
    variants = list(table.keys())
    replicas = sorted({r for col in table.values() for r in col})
    width = 20
    header = f"{'Replicas':>8} | " + " | ".join(f"{v:>{width}}" for v in variants)
    lines = [header, "-" * len(header)]
    for r in replicas:
        cells = []
        for v in variants:
            rep = table[v].get(r)
            cells.append(f"{rep.format_cell() if rep else '-':>{width}}")
        lines.append(f"{r:>8} | " + " | ".join(cells))
    return "\n".join(lines)


def write_sweep_json(path, table):
    obj = {v: {str(r): rep.to_json_obj() for r, rep in col.items()} for v, col in table.items()}
    atomic_write_json(path, obj)


@dataclass
class ScalingModelParams:
    host_rate: float       # samples/s one loader worker can produce
    compute_rate: float    # per-replica compute throughput
    step_overhead: float   # fixed collective cost paid once R >= 2
    growth: float          # per-doubling growth of the collective cost

    def overhead(self, replicas):
        if replicas <= 1:
            return 0.0
        return max(0.0, self.step_overhead + self.growth * (math.log2(replicas) - 1.0))


def predict_scaling(params, replicas, workers):
    """min(host feed rate, replica compute rate after collective overhead)."""
    if replicas < 1 or workers < 1:
        raise ConfigError("replicas and workers must be >= 1")
    host = params.host_rate * workers
    compute = replicas * params.compute_rate / (1.0 + params.overhead(replicas))
    return min(host, compute)


def fit_scaling(replica_list, throughputs, host_rate=math.inf):
    """Fit (compute_rate, step_overhead, growth) to measured throughputs.

    compute_rate comes from the R=1 point; the overhead terms solve the
    linear least-squares system o(R) = step + growth*(log2 R - 1) on the
    implied per-point overheads. host_rate defaults to unbounded (the fit
    targets loader-unconstrained columns).
    """
    pairs = dict(zip(replica_list, throughputs))
    if 1 not in pairs:
        raise ConfigError("fit requires an R=1 measurement")
    compute_rate = float(pairs[1])
    xs, ys = [], []
    for r, thr in pairs.items():
        if r >= 2:
            xs.append(math.log2(r) - 1.0)
            ys.append(r * compute_rate / thr - 1.0)
    if len(xs) >= 2:
        coeffs = np.polyfit(np.asarray(xs), np.asarray(ys), 1)
        growth, step = float(coeffs[0]), float(coeffs[1])
    elif len(xs) == 1:
        growth, step = 0.0, ys[0]
    else:
        growth, step = 0.0, 0.0
    return ScalingModelParams(host_rate=host_rate, compute_rate=compute_rate,
                              step_overhead=step, growth=growth)


def kernel_benchmark(n_features=512, hidden=10, t_len=3, iters=200, dtype=np.float32, backends=None):
    """Compare the compiled and pure-python kernel backends on the LSTM
    forward+backward hot path. Returns {backend: samples/s}."""
    from . import backend as backend_mod

    rng = np.random.default_rng(0)
    seq = rng.standard_normal((t_len, n_features)).astype(dtype)
    wx = (rng.standard_normal((4 * hidden, n_features)) * 0.05).astype(dtype)
    wh = (rng.standard_normal((4 * hidden, hidden)) * 0.05).astype(dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    dh = rng.standard_normal((t_len, hidden)).astype(dtype)
    results = {}
    for name in backends or backend_mod.available_backends():
        impl = backend_mod.get_backend(name)
        impl.lstm_seq_forward(seq, wx, wh, b)  # warm-up
        t0 = time.perf_counter()
        for _ in range(iters):
            h, c, gi, gf, gg, go = impl.lstm_seq_forward(seq, wx, wh, b)
            impl.lstm_seq_backward(seq, wx, wh, h, c, gi, gf, gg, go, dh)
        results[name] = iters / (time.perf_counter() - t0)
    return results
