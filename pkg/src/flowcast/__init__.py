"""flowcast: training-and-benchmarking engine for an LSTM encoder-decoder
surrogate of tank-flow simulations."""

__version__ = "0.1.0"

from .backend import ACTIVE as kernel_backend  # noqa: F401
