"""Sharded loading and data-parallel replica steps.

Replicas and loader instances all live inside one process group: the
collective is an in-memory fixed-order reduction, which keeps the
data-parallel equivalence tests bitwise-deterministic. A networked
transport could be slotted in behind `allreduce_mean` without touching
callers.
"""

import queue
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LoaderError, ShapeError
from .training import adam_step, batch_gradients


@dataclass
class ShardSpec:
    num_instances: int
    instance_index: int

    def __post_init__(self):
        if self.num_instances < 1 or not 0 <= self.instance_index < self.num_instances:
            raise ConfigError(f"invalid shard spec {self}")


@dataclass
class LoaderConfig:
    workers: int = 1
    queue_capacity: int = 8
    per_sample_delay: float = 0.0  # seconds of simulated host-side preprocessing
    seed: int = 0

    def __post_init__(self):
        if self.workers < 1 or self.queue_capacity < 1 or self.per_sample_delay < 0:
            raise ConfigError(f"invalid loader config {self}")


def shard_dataset(samples, spec):
    """Round-robin shard: sample i belongs to shard (i mod num_instances);
    order within a shard is preserved."""
    return list(samples[spec.instance_index :: spec.num_instances])


def allreduce_mean(grad_sets):
    """Coordinate-wise mean over replica gradient sets, summed in fixed
    replica-index order so repeated calls are bitwise identical."""
    if not grad_sets:
        raise ConfigError("allreduce over zero replicas")
    keys = list(grad_sets[0].keys())
    for grads in grad_sets[1:]:
        for key in keys:
            if grads[key].shape != grad_sets[0][key].shape:
                raise ShapeError(f"replica gradient shapes differ for block {key}")
    out = {}
    for key in keys:
        acc = grad_sets[0][key].copy()
        for grads in grad_sets[1:]:
            acc += grads[key]
        acc /= len(grad_sets)
        out[key] = acc
    return out


def data_parallel_step(model, state, microbatches):
    """One synchronized step: each replica computes mean-loss gradients on
    its microbatch against the shared pre-step parameters, gradients are
    mean-reduced, and a single Adam update is applied.

    Returns the mean loss over replicas.
    """
    if not microbatches:
        raise ConfigError("need at least one microbatch")
    sizes = {len(mb) for mb in microbatches}
    if len(sizes) != 1:
        raise ConfigError(f"unequal microbatch sizes {sorted(sizes)}")
    losses = []
    grad_sets = []
    for microbatch in microbatches:
        loss, grads = batch_gradients(model, microbatch)
        losses.append(loss)
        grad_sets.append(grads)
    mean_grads = allreduce_mean(grad_sets)
    adam_step(state, model.params(), mean_grads)
    return float(np.mean(losses))


class LoaderStream:
    """Multi-worker prefetch over one shard.

    `workers` producer threads claim samples from a shared index cursor,
    simulate cfg.per_sample_delay of preprocessing each, and push into a
    bounded queue; iterating the stream drains exactly one epoch (every
    sample delivered exactly once). Worker failures surface as LoaderError
    on the consumer side, never as a hang. With workers == 1 the delivery
    order equals the shard order.
    """

    _ERROR = object()

    def __init__(self, samples, cfg, ordered=False):
        if not samples:
            raise ConfigError("loader requires a non-empty shard")
        self._samples = list(samples)
        self._cfg = cfg
        self._ordered = ordered
        self._queue = queue.Queue(maxsize=cfg.queue_capacity)
        self._cursor = 0
        self._cursor_lock = threading.Lock()
        self._failure = None
        self.max_occupancy = 0
        self._threads = [
            threading.Thread(target=self._produce, name=f"loader-{i}", daemon=True)
            for i in range(cfg.workers)
        ]
        for t in self._threads:
            t.start()

    def _next_index(self):
        with self._cursor_lock:
            if self._cursor >= len(self._samples):
                return None
            idx = self._cursor
            self._cursor += 1
            return idx

    def _produce(self):
        try:
            while True:
                idx = self._next_index()
                if idx is None:
                    return
                if self._cfg.per_sample_delay > 0:
                    time.sleep(self._cfg.per_sample_delay)
                self._queue.put((idx, self._samples[idx]))
                self.max_occupancy = max(self.max_occupancy, self._queue.qsize())
        except BaseException as exc:  # surfaced to the consumer
            self._failure = exc
            self._queue.put(self._ERROR)

    def __iter__(self):
        delivered = 0
        pending = {}  # ordered mode: out-of-order arrivals awaiting their turn
        expect = 0
        while delivered < len(self._samples):
            if self._ordered and expect in pending:
                item = pending.pop(expect)
                expect += 1
                delivered += 1
                yield item
                continue
            got = self._queue.get()
            if got is self._ERROR:
                raise LoaderError(f"loader worker failed: {self._failure!r}") from self._failure
            idx, item = got
            if self._ordered:
                pending[idx] = item
                continue
            delivered += 1
            yield item

    def join(self):
        for t in self._threads:
            t.join()


def start_loader(samples, cfg, ordered=False):
    """Spin up the prefetch workers and return the sample stream handle.

    ordered=True reassembles shard order on the consumer side (used by
    training, where the update sequence must be seed-deterministic even
    with multiple workers).
    """
    return LoaderStream(samples, cfg, ordered=ordered)


def step_groups(model, state, groups):
    """Apply data_parallel_step to a stream of microbatch groups, splitting
    unequal tail groups so every sample is consumed."""
    total_loss = 0.0
    n_steps = 0
    for group in groups:
        if len({len(mb) for mb in group}) == 1:
            total_loss += data_parallel_step(model, state, group)
            n_steps += 1
        else:
            for microbatch in group:
                total_loss += data_parallel_step(model, state, [microbatch])
                n_steps += 1
    return total_loss / max(n_steps, 1)


def fit_data_parallel(model, train_samples, val_samples, cfg, replicas=1, loader_cfg=None):
    """Early-stopped training over R replicas with sharded, prefetched
    loading. Reduces to the single-trainer fit when replicas == 1.

    Returns (model restored to the best-validation epoch, history).
    """
    from .layers import replace_params
    from .training import EarlyStopState, init_adam, validation_loss

    if not train_samples or not val_samples:
        raise ConfigError("fit requires non-empty train and validation sets")
    loader_cfg = loader_cfg or LoaderConfig()
    state = init_adam(model, lr=cfg.lr)
    stopper = EarlyStopState()
    best_params = {k: v.copy() for k, v in model.params().items()}
    history = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(train_samples))
        shuffled = [train_samples[i] for i in order]
        shards = [shard_dataset(shuffled, ShardSpec(replicas, i)) for i in range(replicas)]
        streams = [iter(start_loader(s, loader_cfg, ordered=True)) for s in shards if s]

        def groups():
            active = list(streams)
            while active:
                group, still = [], []
                for stream in active:
                    microbatch = [s for s in
                                  (next(stream, None) for _ in range(cfg.batch_size))
                                  if s is not None]
                    if microbatch:
                        group.append(microbatch)
                        still.append(stream)
                active = still
                if group:
                    yield group

        train_loss = step_groups(model, state, groups())
        val_loss = validation_loss(model, val_samples)
        if stopper.update(val_loss, cfg.min_delta):
            best_params = {k: v.copy() for k, v in model.params().items()}
        stopped = stopper.epochs_since >= cfg.patience
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "lr": cfg.lr, "stopped": stopped})
        if stopped:
            break
    return replace_params(model, best_params), history
