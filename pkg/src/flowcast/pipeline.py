"""Preprocessing: per-dimension normalization, case-level splits, and
sliding-window sample construction."""

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import ConfigError, ShapeError
from .ioutil import atomic_write_json

STD_FLOOR = 1e-8


@dataclass
class NormStats:
    means: np.ndarray  # (n_dims,)
    stds: np.ndarray   # (n_dims,), floored at STD_FLOOR

    def to_json(self, path):
        atomic_write_json(path, {"means": self.means.tolist(), "stds": self.stds.tolist()})

    @classmethod
    def from_json(cls, path):
        import json

        with open(path) as f:
            obj = json.load(f)
        return cls(np.asarray(obj["means"], dtype=np.float64),
                   np.asarray(obj["stds"], dtype=np.float64))


@dataclass
class SplitSpec:
    seed: int
    train: List[int]
    val: List[int]
    test: List[int]


@dataclass
class SampleWindow:
    input: np.ndarray   # (n_timesteps, n_cells * n_dims)
    target: np.ndarray  # (n_outputs, n_cells * n_dims)
    case_index: int = -1
    start: int = 0


def compute_norm_stats(cases):
    """Per-dimension mean and std over all states and cells of the given
    (training-split) cases; std floored so constant dimensions stay usable."""
    if not cases:
        raise ConfigError("compute_norm_stats requires at least one case")
    stacked = np.concatenate([c.states.reshape(-1, c.states.shape[-1]) for c in cases], axis=0)
    stacked = stacked.astype(np.float64)
    means = stacked.mean(axis=0)
    stds = np.maximum(stacked.std(axis=0), STD_FLOOR)
    return NormStats(means, stds)


def apply_normalization(data, stats):
    """x' = (x - mean_d) / std_d on the trailing dimension axis."""
    data = np.asarray(data)
    if data.shape[-1] != stats.means.shape[0]:
        raise ShapeError(f"trailing extent {data.shape[-1]} does not match {stats.means.shape[0]} dims")
    return ((data - stats.means) / stats.stds).astype(data.dtype)


def inverse_normalization(data, stats):
    data = np.asarray(data)
    if data.shape[-1] != stats.means.shape[0]:
        raise ShapeError(f"trailing extent {data.shape[-1]} does not match {stats.means.shape[0]} dims")
    return (data * stats.stds + stats.means).astype(data.dtype)


def split_cases(n_cases, seed):
    """Shuffled case-level split: 80% train+val vs test, then 20% of
    train+val as validation. Both stages round down, which is the only
    rounding consistent with 131 -> 84/20/27."""
    if n_cases < 3:
        raise ConfigError("need at least 3 cases to populate train/val/test")
    order = np.random.default_rng(seed).permutation(n_cases)
    n_trainval = int(0.8 * n_cases)
    trainval, test = order[:n_trainval], order[n_trainval:]
    n_val = int(0.2 * n_trainval)
    val, train = trainval[:n_val], trainval[n_val:]
    return SplitSpec(seed=seed, train=train.tolist(), val=val.tolist(), test=test.tolist())


def make_windows(case, n_timesteps=3, n_outputs=1, case_index=-1, stats=None, dtype=np.float32):
    """Sliding windows over one case: rows are consecutive flattened states,
    the target immediately follows the input window. Windows never cross
    case boundaries; short cases yield an empty list."""
    n_states = case.states.shape[0]
    flat = case.states.reshape(n_states, -1)
    if stats is not None:
        per_state = apply_normalization(case.states.astype(np.float64), stats)
        flat = per_state.reshape(n_states, -1)
    flat = flat.astype(dtype)
    count = n_states - n_timesteps - n_outputs + 1
    windows = []
    for start in range(max(0, count)):
        windows.append(SampleWindow(
            input=flat[start : start + n_timesteps].copy(),
            target=flat[start + n_timesteps : start + n_timesteps + n_outputs].copy(),
            case_index=case_index,
            start=start,
        ))
    return windows


def dataset_windows(dataset, case_indices, stats=None, n_timesteps=3, n_outputs=1, dtype=np.float32):
    """Windows pooled over the selected cases."""
    out = []
    for idx in case_indices:
        out.extend(make_windows(dataset.cases[idx], n_timesteps, n_outputs, idx, stats, dtype))
    return out
