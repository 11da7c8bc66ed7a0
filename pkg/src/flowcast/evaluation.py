"""Autoregressive rollout and accuracy metrics at selected rollout steps."""

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ConstantInputError, ShapeError
from .ioutil import atomic_write_json
from .layers import surrogate_forward
from .pipeline import apply_normalization, inverse_normalization


def rmse(a, b):
    """Root-mean-square error between two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 1:
        raise ShapeError(f"rmse needs equal non-empty vectors, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def pearson(a, b):
    """Pearson correlation: covariance / (std_a * std_b)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ShapeError(f"pearson needs equal vectors of length >= 2, got {a.shape} and {b.shape}")
    da = a - a.mean()
    db = b - b.mean()
    na = np.sqrt(np.sum(da * da))
    nb = np.sqrt(np.sum(db * db))
    if na == 0 or nb == 0:
        raise ConstantInputError("correlation undefined for a constant vector")
    return float(np.sum(da * db) / (na * nb))


def spearman(a, b):
    """Pearson correlation of average-tied rank vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ShapeError(f"spearman needs equal vectors of length >= 2, got {a.shape} and {b.shape}")
    return pearson(rankdata(a, method="average"), rankdata(b, method="average"))


def rollout(predictor, seed_window, n_steps):
    """Autoregressive prediction: each new state is appended and the input
    window slides forward by one row.

    predictor maps a (win_len, F) window to a (1, F) or (F,) prediction.
    Returns (n_steps, F).
    """
    if n_steps < 1:
        raise ConfigError("rollout needs n_steps >= 1")
    window = np.asarray(seed_window)
    if window.ndim != 2:
        raise ShapeError(f"seed window must be 2-D, got shape {window.shape}")
    preds = np.empty((n_steps, window.shape[1]), dtype=window.dtype)
    for k in range(n_steps):
        nxt = np.asarray(predictor(window)).reshape(-1)
        if nxt.shape[0] != window.shape[1]:
            raise ShapeError(f"predictor returned {nxt.shape[0]} features, expected {window.shape[1]}")
        preds[k] = nxt
        window = np.vstack([window[1:], nxt[None, :]])
    return preds


@dataclass
class MetricsRow:
    step: int
    pearson: float
    spearman: float
    rmse: float


@dataclass
class MetricsReport:
    rows: List[MetricsRow]

    def to_json_obj(self):
        return [vars(r) for r in self.rows]

    def write_json(self, path):
        atomic_write_json(path, self.to_json_obj())

    def format_table(self):
        lines = [f"{'Step':>6}  {'Pearson':>10}  {'Spearman':>10}  {'RMSE':>10}"]
        for r in self.rows:
            lines.append(f"{r.step:>6}  {r.pearson:>10.3f}  {r.spearman:>10.3f}  {r.rmse:>10.4f}")
        return "\n".join(lines)


def model_predictor(model):
    def predict(window):
        pred, _ = surrogate_forward(model, window)
        return pred
    return predict


def evaluate_at_steps(model, test_cases, stats, steps=(10, 20, 100), per_case=False):
    """Roll out from the first 3 states of every test case and compare the
    de-normalized prediction at each requested step with the stored state.

    Prediction k (1-based) corresponds to stored state index k + 2, so
    every case needs at least max(steps) + 3 states. Metrics are pooled
    over all cases, cells and dims per step; per_case=True adds a
    per-case breakdown.
    """
    if not test_cases:
        raise ConfigError("no test cases")
    steps = sorted(steps)
    max_step = steps[-1]
    n_in = model.config.n_timesteps
    predict = model_predictor(model)

    pooled_pred = {s: [] for s in steps}
    pooled_true = {s: [] for s in steps}
    per_case_rows = {}
    for name, case in enumerate(test_cases):
        n_states = case.states.shape[0]
        if n_states < max_step + n_in:
            raise ConfigError(
                f"case {name} has {n_states} states, needs >= {max_step + n_in} for step {max_step}"
            )
        norm = apply_normalization(case.states.astype(np.float64), stats)
        flat = norm.reshape(n_states, -1).astype(model.dtype)
        preds = rollout(predict, flat[:n_in], max_step)
        for s in steps:
            pred_state = preds[s - 1].reshape(-1, stats.means.shape[0])
            denorm_pred = inverse_normalization(pred_state.astype(np.float64), stats).ravel()
            true_state = case.states[s + n_in - 1].astype(np.float64).ravel()
            pooled_pred[s].append(denorm_pred)
            pooled_true[s].append(true_state)
            if per_case:
                per_case_rows.setdefault(name, []).append(MetricsRow(
                    step=s,
                    pearson=pearson(denorm_pred, true_state),
                    spearman=spearman(denorm_pred, true_state),
                    rmse=rmse(denorm_pred, true_state),
                ))
    rows = []
    for s in steps:
        pred_all = np.concatenate(pooled_pred[s])
        true_all = np.concatenate(pooled_true[s])
        rows.append(MetricsRow(
            step=s,
            pearson=pearson(pred_all, true_all),
            spearman=spearman(pred_all, true_all),
            rmse=rmse(pred_all, true_all),
        ))
    report = MetricsReport(rows=rows)
    if per_case:
        return report, per_case_rows
    return report
