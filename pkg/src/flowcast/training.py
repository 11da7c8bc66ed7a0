"""MAE loss, Adam, the epoch loop, early stopping and the LR search."""

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .ioutil import atomic_write_text
from .layers import init_model, replace_params, surrogate_backward, surrogate_forward


def mae_loss(pred, target):
    """Mean absolute error over all coordinates, with its gradient wrt pred.

    grad = sign(pred - target) / N, sign(0) = 0.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mae shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 0.00025
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    scratch: dict = field(default_factory=dict)


def init_adam(model, lr=0.00025):
    params = model.params()
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        lr=lr,
    )


def adam_step(state, params, grads):
    """Standard bias-corrected Adam update, in place on `params`.

    theta -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)

    A per-parameter scratch buffer keeps the inner loop allocation-free;
    this update is ~half the cost of a batch-1 training step.
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 / (1.0 - b1**t)
    c2 = 1.0 / (1.0 - b2**t)
    if not state.scratch:
        state.scratch = {k: np.empty_like(p) for k, p in params.items()}
    for key, p in params.items():
        g = grads[key]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter block {key}")
        m = state.m[key]
        v = state.v[key]
        buf = state.scratch[key]
        m *= b1
        np.multiply(g, 1 - b1, out=buf)
        m += buf
        v *= b2
        np.multiply(g, g, out=buf)
        buf *= 1 - b2
        v += buf
        np.multiply(v, c2, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.epsilon
        np.divide(m, buf, out=buf)
        buf *= state.lr * c1
        p -= buf
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1
    lr: float = 0.00025
    seed: int = 0
    min_delta: float = 0.0001
    patience: int = 10
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.patience < 1 or self.epochs < 1:
            raise ConfigError(f"invalid training config: {self}")


@dataclass
class EarlyStopState:
    best_loss: float = math.inf
    epochs_since: int = 0

    def update(self, val_loss, min_delta):
        """Returns True when val_loss is an improvement of more than min_delta."""
        if self.best_loss - val_loss > min_delta:
            self.best_loss = val_loss
            self.epochs_since = 0
            return True
        self.epochs_since += 1
        return False


def sample_gradients(model, sample):
    """Loss and parameter gradients of the MAE loss for one window."""
    pred, cache = surrogate_forward(model, sample.input)
    loss, grad_pred = mae_loss(pred, sample.target)
    grads = surrogate_backward(model, cache, grad_pred)
    return loss, grads


def batch_gradients(model, batch):
    """Mean loss and mean gradients over a mini-batch."""
    loss, grads = sample_gradients(model, batch[0])
    for sample in batch[1:]:
        s_loss, s_grads = sample_gradients(model, sample)
        loss += s_loss
        for key in grads:
            grads[key] += s_grads[key]
    inv = 1.0 / len(batch)
    for key in grads:
        grads[key] *= inv
    return loss * inv, grads


def clip_gradients(grads, clip_norm):
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total > clip_norm > 0:
        scale = clip_norm / total
        for g in grads.values():
            g *= scale
    return grads


def train_epoch(model, state, samples, cfg, epoch=0):
    """One full pass over `samples` in a seeded shuffled order.

    Mutates the model parameters and optimizer state in place; returns the
    mean per-batch training loss.
    """
    if not samples:
        raise ConfigError("train_epoch requires at least one sample")
    order = np.random.default_rng((cfg.seed, epoch)).permutation(len(samples))
    params = model.params()
    losses = []
    for start in range(0, len(order), cfg.batch_size):
        batch = [samples[i] for i in order[start : start + cfg.batch_size]]
        loss, grads = batch_gradients(model, batch)
        if cfg.clip_norm is not None:
            clip_gradients(grads, cfg.clip_norm)
        adam_step(state, params, grads)
        losses.append(loss)
    return float(np.mean(losses))


def validation_loss(model, samples):
    total = 0.0
    for sample in samples:
        pred, _ = surrogate_forward(model, sample.input)
        loss, _ = mae_loss(pred, sample.target)
        total += loss
    return total / len(samples)


def fit_with_early_stopping(model, train_samples, val_samples, cfg):
    """Train until cfg.epochs or until the validation MAE has not improved
    by more than cfg.min_delta for cfg.patience consecutive epochs.

    Returns (model restored to the best-validation epoch, history), where
    history is one dict per epoch: {epoch, train_loss, val_loss, lr, stopped}.
    """
    if not train_samples or not val_samples:
        raise ConfigError("fit requires non-empty train and validation sets")
    state = init_adam(model, lr=cfg.lr)
    stopper = EarlyStopState()
    best_params = {k: v.copy() for k, v in model.params().items()}
    history = []
    for epoch in range(cfg.epochs):
        train_loss = train_epoch(model, state, train_samples, cfg, epoch=epoch)
        val_loss = validation_loss(model, val_samples)
        if stopper.update(val_loss, cfg.min_delta):
            best_params = {k: v.copy() for k, v in model.params().items()}
        stopped = stopper.epochs_since >= cfg.patience
        history.append({
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "lr": cfg.lr,
            "stopped": stopped,
        })
        if stopped:
            break
    return replace_params(model, best_params), history


def write_history(path, history):
    """Training history as JSON lines, one record per epoch."""
    atomic_write_text(path, "".join(json.dumps(rec) + "\n" for rec in history))


def sample_learning_rates(n_sessions, lr_range, seed):
    """Log-uniform draws from [low, high]; the range spans decades, so
    uniform sampling would almost never pick small values."""
    low, high = lr_range
    if not (0 < low < high):
        raise ConfigError(f"invalid learning-rate range {lr_range}")
    rng = np.random.default_rng(seed)
    return [float(10 ** rng.uniform(math.log10(low), math.log10(high))) for _ in range(n_sessions)]


def lr_search(model_config, train_samples, val_samples, cfg, n_sessions=10,
              lr_range=(1e-7, 1e-5), seed=0, dtype=None, progress=None):
    """Run n_sessions independent early-stopped trainings with learning
    rates sampled log-uniformly from lr_range; return the session whose
    best validation loss is minimal.

    Returns (best model, records); records hold one dict per session.
    """
    from dataclasses import replace

    lrs = sample_learning_rates(n_sessions, lr_range, seed)
    records = []
    best_model = None
    best_val = math.inf
    for session, lr in enumerate(lrs):
        session_seed = seed * 1_000_003 + session
        model = init_model(model_config, seed=session_seed)
        if dtype is not None:
            model = model.astype(dtype)
        session_cfg = replace(cfg, lr=lr, seed=session_seed)
        fitted, history = fit_with_early_stopping(model, train_samples, val_samples, session_cfg)
        session_best = min(rec["val_loss"] for rec in history)
        records.append({
            "session": session,
            "lr": lr,
            "epochs_run": len(history),
            "best_val_loss": session_best,
            "final_val_loss": history[-1]["val_loss"],
        })
        if progress is not None:
            progress(records[-1])
        if session_best < best_val:
            best_val = session_best
            best_model = fitted
    return best_model, records
