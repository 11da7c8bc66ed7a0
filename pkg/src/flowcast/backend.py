"""Kernel backend selection.

The compiled extension (`flowcast._kernels`, Cython) is used when it
imported cleanly; otherwise the pure-numpy fallback takes over. Set
FLOWCAST_KERNELS=python|compiled|auto to override (compiled raises if the
extension is unavailable).
"""

import os

from . import kernels_py
from .errors import ConfigError

_MODE = os.environ.get("FLOWCAST_KERNELS", "auto").lower()
if _MODE not in ("auto", "compiled", "python"):
    raise ConfigError(f"FLOWCAST_KERNELS must be auto, compiled or python, got {_MODE!r}")

_compiled = None
if _MODE != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _MODE == "compiled":
            raise ConfigError("FLOWCAST_KERNELS=compiled but flowcast._kernels is not built")

ACTIVE = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else kernels_py

lstm_seq_forward = _impl.lstm_seq_forward
lstm_seq_backward = _impl.lstm_seq_backward
advect_diffuse = _impl.advect_diffuse


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name):
    """Return the kernel module for an explicit backend name (for benchmarks
    and cross-checks)."""
    if name == "python":
        return kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ConfigError("compiled kernel backend is not built")
        return _compiled
    raise ConfigError(f"unknown kernel backend {name!r}")
