"""Minimal dense-array math shared by every other module.

Tensors are plain numpy arrays in row-major order; the dtype carries the
precision (float32 at runtime, float64 wherever gradients are checked).
Every public op validates shapes explicitly and fails fast instead of
broadcasting, and guards against non-finite results.
"""

import numpy as np

from .errors import NumericError, ShapeError

SINGLE = np.float32
DOUBLE = np.float64
DEFAULT_DTYPE = SINGLE

ACTIVATIONS = ("relu", "sigmoid", "linear")


def as_tensor(data, dtype=DEFAULT_DTYPE):
    """Build a contiguous tensor of the requested precision."""
    return np.ascontiguousarray(data, dtype=dtype)


def check_finite(x, context=""):
    """Raise NumericError if x contains NaN or Inf."""
    if not np.all(np.isfinite(x)):
        where = f" in {context}" if context else ""
        raise NumericError(f"non-finite values{where}")
    return x


def matmul(a, b):
    """Matrix product of a (m x k) and b (k x n)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul precision mismatch: {a.dtype} vs {b.dtype}")
    return check_finite(a @ b, "matmul")


def sigmoid(x):
    # exp on the negative half only, so large |x| cannot overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x, kind):
    """Elementwise relu / sigmoid / linear."""
    x = np.asarray(x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "linear":
        return x
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activation_grad(x, kind):
    """Elementwise derivative of `activation` at x; relu'(0) = 0."""
    x = np.asarray(x)
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (1.0 - s)
    if kind == "linear":
        return np.ones_like(x)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
