"""Synthetic tank-flow trajectories.

A small 2-D advection-diffusion solver stands in for the real URANS tank
simulations: an inlet band on the left edge drives flow into the domain, a
recirculation term feeds a fraction of the right-half mean field back into
a left-half source region, and the remaining boundary is no-slip. This is
an analog for exercising the training/evaluation/benchmark paths end to
end, not a port of any production solver.
"""

import struct
from dataclasses import dataclass, field, replace
from typing import List, Tuple

import numpy as np

from . import backend
from .errors import ConfigError, FormatError, NumericError
from .ioutil import atomic_write_bytes

DATASET_MAGIC = b"CFD1"
DATASET_VERSION = 1


@dataclass
class TankConfig:
    grid_h: int = 16
    grid_w: int = 16
    dt: float = 0.05
    nu: float = 0.08
    cell_size: float = 1.0
    inlet_velocity: float = 0.5
    recirculation_rate: float = 0.2
    write_interval: int = 10
    n_states: int = 120
    # diagnostic knobs: advection off / closed boundaries isolate the
    # conservative diffusion stencil
    advection: bool = True
    boundary: str = "noslip"  # "noslip" | "closed"

    def __post_init__(self):
        if self.grid_h < 4 or self.grid_w < 4:
            raise ConfigError("grid must be at least 4x4")
        if self.n_states < 4:
            raise ConfigError("need n_states >= 4 for at least one training window")
        if self.write_interval < 1 or self.dt <= 0 or self.nu < 0:
            raise ConfigError(f"invalid solver settings in {self}")
        if self.boundary not in ("noslip", "closed"):
            raise ConfigError(f"unknown boundary mode {self.boundary!r}")

    @property
    def n_cells(self):
        return self.grid_h * self.grid_w

    def stability_margin(self):
        """Explicit-scheme bound: dt * (|inlet|/h + 4 nu / h^2) must be < 1."""
        h = self.cell_size
        return self.dt * (abs(self.inlet_velocity) / h + 4.0 * self.nu / h**2)

    def check_stability(self):
        margin = self.stability_margin()
        if margin >= 1.0:
            raise ConfigError(
                f"unstable configuration: dt*(|inlet|/h + 4nu/h^2) = {margin:.3f} >= 1"
            )


@dataclass
class CaseTrajectory:
    inlet_velocity: float
    recirculation_rate: float
    states: np.ndarray  # (n_states, n_cells, n_dims) float32


@dataclass
class Dataset:
    cases: List[CaseTrajectory] = field(default_factory=list)

    @property
    def shape(self):
        """(n_cases, n_states, n_cells, n_dims)."""
        first = self.cases[0].states.shape
        return (len(self.cases),) + first


def _inlet_rows(grid_h):
    return slice(grid_h // 3, 2 * grid_h // 3)


def _source_region(grid_h, grid_w):
    return _inlet_rows(grid_h), slice(1, max(2, grid_w // 8) + 1)


def solver_step(u, cfg):
    """One explicit solver step on a (grid_h, grid_w, 2) field."""
    if u.shape != (cfg.grid_h, cfg.grid_w, 2):
        raise ConfigError(f"field shape {u.shape} does not match grid {cfg.grid_h}x{cfg.grid_w}")
    cfg.check_stability()
    u = np.ascontiguousarray(u)
    out = backend.advect_diffuse(u, cfg.dt, cfg.nu, cfg.cell_size, cfg.advection)

    if cfg.recirculation_rate != 0.0:
        right_mean = u[:, cfg.grid_w // 2 :, :].mean(axis=(0, 1))
        rows, cols = _source_region(cfg.grid_h, cfg.grid_w)
        out[rows, cols, :] += (cfg.dt * cfg.recirculation_rate) * right_mean

    if cfg.boundary == "noslip":
        out[0, :, :] = 0.0
        out[-1, :, :] = 0.0
        out[:, 0, :] = 0.0
        out[:, -1, :] = 0.0
        rows = _inlet_rows(cfg.grid_h)
        out[rows, 0, 0] = cfg.inlet_velocity
        out[rows, 0, 1] = 0.0

    if not np.all(np.isfinite(out)):
        raise NumericError("solver produced a non-finite field")
    return out


def generate_case(cfg, seed=0):
    """Run the solver from the zero field, storing every write_interval-th
    step. State k is the field after exactly k * write_interval steps, so
    state 0 is the initial zero field.

    The solver is deterministic; `seed` is accepted for interface symmetry
    with the dataset-level generator.
    """
    del seed
    cfg.check_stability()
    u = np.zeros((cfg.grid_h, cfg.grid_w, 2), dtype=np.float64)
    states = np.zeros((cfg.n_states, cfg.n_cells, 2), dtype=np.float32)
    states[0] = u.reshape(cfg.n_cells, 2)
    for k in range(1, cfg.n_states):
        for _ in range(cfg.write_interval):
            u = solver_step(u, cfg)
        states[k] = u.reshape(cfg.n_cells, 2).astype(np.float32)
    return CaseTrajectory(cfg.inlet_velocity, cfg.recirculation_rate, states)


def generate_dataset(n_cases, inlet_range=(0.2, 1.0), recirc_range=(0.0, 0.5),
                     cfg=None, seed=0):
    """Sample per-case (inlet_velocity, recirculation_rate) uniformly from
    the given ranges and run the solver for each case."""
    if n_cases < 1:
        raise ConfigError("need n_cases >= 1")
    for lo, hi in (inlet_range, recirc_range):
        if not lo <= hi:
            raise ConfigError(f"invalid parameter range ({lo}, {hi})")
    if cfg is None:
        cfg = TankConfig()
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(n_cases):
        inlet = float(rng.uniform(*inlet_range))
        recirc = float(rng.uniform(*recirc_range))
        case_cfg = replace(cfg, inlet_velocity=inlet, recirculation_rate=recirc)
        case_cfg.check_stability()
        cases.append(generate_case(case_cfg))
    return Dataset(cases=cases)


def write_dataset(path, dataset):
    """Binary dataset: magic CFD1; little-endian uint32 (version, n_cases,
    n_states, n_cells, n_dims); then per case two little-endian float64
    parameters followed by the float32 states in (state, cell, dim) order."""
    n_cases, n_states, n_cells, n_dims = dataset.shape
    parts = [DATASET_MAGIC, struct.pack("<5I", DATASET_VERSION, n_cases, n_states, n_cells, n_dims)]
    for case in dataset.cases:
        if case.states.shape != (n_states, n_cells, n_dims):
            raise FormatError("all cases must share (n_states, n_cells, n_dims)")
        parts.append(struct.pack("<2d", case.inlet_velocity, case.recirculation_rate))
        parts.append(np.ascontiguousarray(case.states, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def read_dataset(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad dataset magic {blob[:4]!r}")
    if len(blob) < 24:
        raise FormatError(f"{path}: truncated dataset header")
    version, n_cases, n_states, n_cells, n_dims = struct.unpack("<5I", blob[4:24])
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    state_bytes = n_states * n_cells * n_dims * 4
    expected = 24 + n_cases * (16 + state_bytes)
    if len(blob) != expected:
        raise FormatError(f"{path}: file holds {len(blob)} bytes, header implies {expected}")
    cases = []
    pos = 24
    for _ in range(n_cases):
        inlet, recirc = struct.unpack_from("<2d", blob, pos)
        pos += 16
        states = np.frombuffer(blob, dtype="<f4", count=n_states * n_cells * n_dims, offset=pos)
        states = states.reshape(n_states, n_cells, n_dims).copy()
        pos += state_bytes
        cases.append(CaseTrajectory(inlet, recirc, states))
    return Dataset(cases=cases)


def case_params(dataset) -> List[Tuple[float, float]]:
    return [(c.inlet_velocity, c.recirculation_rate) for c in dataset.cases]
