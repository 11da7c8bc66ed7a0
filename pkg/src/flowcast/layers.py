"""Encoder-decoder relu-LSTM surrogate: forward passes and exact BPTT.

Architecture: LSTM(hidden, relu) encoder -> repeat(n_outputs) ->
LSTM(hidden, relu) decoder -> per-timestep Dense(dense_hidden, relu) ->
per-timestep Dense(n_features, linear).

The LSTM uses relu both for the candidate gate and for the cell-output
activation; the i/f/o gates stay sigmoid. Gate blocks are ordered
(i, f, g, o) along the 4H axis of the kernels, and that order is part of
the checkpoint format.
"""

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import backend
from .errors import FormatError, ShapeError
from .tensor_core import DEFAULT_DTYPE, activation, activation_grad, check_finite

CHECKPOINT_MAGIC = b"FCM1"

# Serialization / flattening order of the parameter blocks.
PARAM_KEYS = (
    "encoder.wx", "encoder.wh", "encoder.b",
    "decoder.wx", "decoder.wh", "decoder.b",
    "dense1.w", "dense1.b",
    "dense2.w", "dense2.b",
)


@dataclass
class ModelConfig:
    n_features: int
    n_timesteps: int = 3
    n_outputs: int = 1
    hidden: int = 10
    dense_hidden: int = 10

    def __post_init__(self):
        if min(self.n_features, self.n_timesteps, self.n_outputs, self.hidden, self.dense_hidden) < 1:
            raise ShapeError(f"all model extents must be >= 1, got {self}")


@dataclass
class LSTMParams:
    wx: np.ndarray  # (4H, F)
    wh: np.ndarray  # (4H, H)
    b: np.ndarray   # (4H,)

    def __post_init__(self):
        hid = self.wh.shape[1]
        if self.wx.shape[0] != 4 * hid or self.wh.shape != (4 * hid, hid) or self.b.shape != (4 * hid,):
            raise ShapeError(
                f"inconsistent LSTM parameter shapes: wx {self.wx.shape}, wh {self.wh.shape}, b {self.b.shape}"
            )

    @property
    def hidden(self):
        return self.wh.shape[1]

    @property
    def features(self):
        return self.wx.shape[1]


@dataclass
class DenseParams:
    w: np.ndarray  # (U, F)
    b: np.ndarray  # (U,)
    activation: str = "linear"

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0],):
            raise ShapeError(f"inconsistent dense shapes: w {self.w.shape}, b {self.b.shape}")


@dataclass
class SurrogateModel:
    encoder: LSTMParams
    decoder: LSTMParams
    dense1: DenseParams
    dense2: DenseParams
    config: ModelConfig = field(repr=False)

    def __post_init__(self):
        cfg = self.config
        if self.encoder.features != cfg.n_features or self.encoder.hidden != cfg.hidden:
            raise ShapeError("encoder extents inconsistent with config")
        if self.decoder.features != cfg.hidden or self.decoder.hidden != cfg.hidden:
            raise ShapeError("decoder extents inconsistent with config")
        if self.dense1.w.shape != (cfg.dense_hidden, cfg.hidden):
            raise ShapeError("dense1 extents inconsistent with config")
        if self.dense2.w.shape != (cfg.n_features, cfg.dense_hidden):
            raise ShapeError("dense2 extents inconsistent with config")
        if self.dense2.activation != "linear":
            raise ShapeError("output layer activation must be linear")

    @property
    def dtype(self):
        return self.encoder.wx.dtype

    def params(self):
        """Parameter arrays keyed by PARAM_KEYS, in serialization order."""
        return {
            "encoder.wx": self.encoder.wx, "encoder.wh": self.encoder.wh, "encoder.b": self.encoder.b,
            "decoder.wx": self.decoder.wx, "decoder.wh": self.decoder.wh, "decoder.b": self.decoder.b,
            "dense1.w": self.dense1.w, "dense1.b": self.dense1.b,
            "dense2.w": self.dense2.w, "dense2.b": self.dense2.b,
        }

    def copy(self):
        return replace_params(self, {k: v.copy() for k, v in self.params().items()})

    def astype(self, dtype):
        return replace_params(self, {k: v.astype(dtype) for k, v in self.params().items()})


def replace_params(model, arrays):
    """Rebuild a model with the same config but new parameter arrays."""
    return SurrogateModel(
        encoder=LSTMParams(arrays["encoder.wx"], arrays["encoder.wh"], arrays["encoder.b"]),
        decoder=LSTMParams(arrays["decoder.wx"], arrays["decoder.wh"], arrays["decoder.b"]),
        dense1=DenseParams(arrays["dense1.w"], arrays["dense1.b"], "relu"),
        dense2=DenseParams(arrays["dense2.w"], arrays["dense2.b"], "linear"),
        config=model.config,
    )


def _glorot(rng, shape, dtype):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _init_lstm(rng, hid, feat, dtype):
    b = np.zeros(4 * hid, dtype=dtype)
    b[hid : 2 * hid] = 1.0  # forget-gate bias 1 stabilizes the relu cell
    return LSTMParams(
        wx=_glorot(rng, (4 * hid, feat), dtype),
        wh=_glorot(rng, (4 * hid, hid), dtype),
        b=b,
    )


def init_model(config, seed, dtype=DEFAULT_DTYPE):
    """Seeded Glorot-uniform initialization; all biases zero except the
    forget gate."""
    rng = np.random.default_rng(seed)
    return SurrogateModel(
        encoder=_init_lstm(rng, config.hidden, config.n_features, dtype),
        decoder=_init_lstm(rng, config.hidden, config.hidden, dtype),
        dense1=DenseParams(
            _glorot(rng, (config.dense_hidden, config.hidden), dtype),
            np.zeros(config.dense_hidden, dtype=dtype), "relu",
        ),
        dense2=DenseParams(
            _glorot(rng, (config.n_features, config.dense_hidden), dtype),
            np.zeros(config.n_features, dtype=dtype), "linear",
        ),
        config=config,
    )


def zero_grads(model):
    return {k: np.zeros_like(v) for k, v in model.params().items()}


class LSTMCache(NamedTuple):
    seq: np.ndarray
    params: LSTMParams
    h: np.ndarray
    c: np.ndarray
    gi: np.ndarray
    gf: np.ndarray
    gg: np.ndarray
    go: np.ndarray
    return_sequences: bool


def lstm_cell_step(x_t, h_prev, c_prev, p):
    """Single relu-LSTM cell update; returns (h, c, gate cache)."""
    hid = p.hidden
    if x_t.shape != (p.features,) or h_prev.shape != (hid,) or c_prev.shape != (hid,):
        raise ShapeError(
            f"cell step shapes {x_t.shape}/{h_prev.shape}/{c_prev.shape} inconsistent with params"
        )
    z = p.wx @ x_t + p.wh @ h_prev + p.b
    gi = activation(z[:hid], "sigmoid")
    gf = activation(z[hid : 2 * hid], "sigmoid")
    gg = activation(z[2 * hid : 3 * hid], "relu")
    go = activation(z[3 * hid :], "sigmoid")
    c = gf * c_prev + gi * gg
    h = go * np.maximum(c, 0)
    check_finite(h, "lstm_cell_step")
    return h, c, (gi, gf, gg, go)


def lstm_forward(seq, p, return_sequences):
    """Chain the cell over a (T, F) sequence from zero initial state."""
    if seq.ndim != 2 or seq.shape[1] != p.features:
        raise ShapeError(f"sequence shape {seq.shape} inconsistent with input size {p.features}")
    if seq.shape[0] == 0:
        raise ShapeError("empty sequence")
    seq = np.ascontiguousarray(seq)
    h, c, gi, gf, gg, go = backend.lstm_seq_forward(seq, p.wx, p.wh, p.b)
    cache = LSTMCache(seq, p, h, c, gi, gf, gg, go, return_sequences)
    out = h if return_sequences else h[-1]
    check_finite(out, "lstm_forward")
    return out, cache


def lstm_backward(cache, grad_out):
    """BPTT matching lstm_forward; returns (LSTMParams-shaped grads, dseq)."""
    t_len, hid = cache.h.shape
    grad_out = np.asarray(grad_out, dtype=cache.seq.dtype)
    if cache.return_sequences:
        if grad_out.shape != (t_len, hid):
            raise ShapeError(f"grad shape {grad_out.shape}, expected {(t_len, hid)}")
        dh_seq = np.ascontiguousarray(grad_out)
    else:
        if grad_out.shape != (hid,):
            raise ShapeError(f"grad shape {grad_out.shape}, expected {(hid,)}")
        dh_seq = np.zeros((t_len, hid), dtype=cache.seq.dtype)
        dh_seq[-1] = grad_out
    p = cache.params
    dwx, dwh, db, dseq = backend.lstm_seq_backward(
        cache.seq, p.wx, p.wh, cache.h, cache.c,
        cache.gi, cache.gf, cache.gg, cache.go, dh_seq,
    )
    return LSTMParams(dwx, dwh, db), dseq


def repeat_vector(v, n):
    if n < 1:
        raise ShapeError(f"repeat count must be >= 1, got {n}")
    if v.ndim != 1:
        raise ShapeError(f"repeat_vector expects a vector, got shape {v.shape}")
    return np.tile(v, (n, 1))


def repeat_vector_backward(grad_out):
    """Row-sum of the upstream gradient."""
    return np.asarray(grad_out).sum(axis=0)


class DenseCache(NamedTuple):
    seq: np.ndarray
    params: DenseParams
    z: np.ndarray  # pre-activation, (T, U)


def time_distributed_dense(seq, p):
    """Apply the same dense layer to each timestep row of a (T, F) input."""
    if seq.ndim != 2 or seq.shape[1] != p.w.shape[1]:
        raise ShapeError(f"dense input shape {seq.shape} inconsistent with kernel {p.w.shape}")
    z = seq @ p.w.T + p.b
    out = activation(z, p.activation)
    check_finite(out, "time_distributed_dense")
    return out, DenseCache(seq, p, z)


def time_distributed_dense_backward(cache, grad_out):
    """Returns (DenseParams-shaped grads, grad wrt input). Parameter
    gradients sum over timesteps."""
    if grad_out.shape != cache.z.shape:
        raise ShapeError(f"grad shape {grad_out.shape}, expected {cache.z.shape}")
    dz = grad_out * activation_grad(cache.z, cache.params.activation)
    dw = dz.T @ cache.seq
    db = dz.sum(axis=0)
    dseq = dz @ cache.params.w
    return DenseParams(dw, db, cache.params.activation), dseq


class SurrogateCache(NamedTuple):
    encoder: LSTMCache
    n_outputs: int
    decoder: LSTMCache
    dense1: DenseCache
    dense2: DenseCache


def surrogate_forward(model, window):
    """Full forward pass: (n_timesteps, n_features) -> (n_outputs, n_features)."""
    cfg = model.config
    window = np.asarray(window)
    if window.shape != (cfg.n_timesteps, cfg.n_features):
        raise ShapeError(
            f"window shape {window.shape}, expected {(cfg.n_timesteps, cfg.n_features)}"
        )
    enc_out, enc_cache = lstm_forward(window, model.encoder, return_sequences=False)
    repeated = repeat_vector(enc_out, cfg.n_outputs)
    dec_out, dec_cache = lstm_forward(repeated, model.decoder, return_sequences=True)
    hid_out, d1_cache = time_distributed_dense(dec_out, model.dense1)
    pred, d2_cache = time_distributed_dense(hid_out, model.dense2)
    return pred, SurrogateCache(enc_cache, cfg.n_outputs, dec_cache, d1_cache, d2_cache)


def surrogate_backward(model, cache, grad_pred):
    """Reverse pass; returns gradients keyed like model.params()."""
    grad_pred = np.asarray(grad_pred, dtype=model.dtype)
    if grad_pred.shape != cache.dense2.z.shape:
        raise ShapeError(f"grad shape {grad_pred.shape}, expected {cache.dense2.z.shape}")
    d2_grads, d_hid = time_distributed_dense_backward(cache.dense2, grad_pred)
    d1_grads, d_dec = time_distributed_dense_backward(cache.dense1, d_hid)
    dec_grads, d_rep = lstm_backward(cache.decoder, d_dec)
    d_enc_out = repeat_vector_backward(d_rep)
    enc_grads, _ = lstm_backward(cache.encoder, d_enc_out)
    return {
        "encoder.wx": enc_grads.wx, "encoder.wh": enc_grads.wh, "encoder.b": enc_grads.b,
        "decoder.wx": dec_grads.wx, "decoder.wh": dec_grads.wh, "decoder.b": dec_grads.b,
        "dense1.w": d1_grads.w, "dense1.b": d1_grads.b,
        "dense2.w": d2_grads.w, "dense2.b": d2_grads.b,
    }


def save_checkpoint(path, model):
    """Binary checkpoint: magic FCM1, five little-endian uint32 extents,
    then all parameter tensors as little-endian float32 in PARAM_KEYS order."""
    cfg = model.config
    header = CHECKPOINT_MAGIC + struct.pack(
        "<5I", cfg.n_timesteps, cfg.n_outputs, cfg.n_features, cfg.hidden, cfg.dense_hidden
    )
    blobs = [np.ascontiguousarray(v, dtype="<f4").tobytes() for v in model.params().values()]
    from .ioutil import atomic_write_bytes

    atomic_write_bytes(path, header + b"".join(blobs))


def load_checkpoint(path, dtype=DEFAULT_DTYPE):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 24:
        raise FormatError(f"{path}: truncated checkpoint header")
    n_timesteps, n_outputs, n_features, hidden, dense_hidden = struct.unpack("<5I", blob[4:24])
    cfg = ModelConfig(
        n_features=n_features, n_timesteps=n_timesteps, n_outputs=n_outputs,
        hidden=hidden, dense_hidden=dense_hidden,
    )
    shapes = {
        "encoder.wx": (4 * hidden, n_features), "encoder.wh": (4 * hidden, hidden), "encoder.b": (4 * hidden,),
        "decoder.wx": (4 * hidden, hidden), "decoder.wh": (4 * hidden, hidden), "decoder.b": (4 * hidden,),
        "dense1.w": (dense_hidden, hidden), "dense1.b": (dense_hidden,),
        "dense2.w": (n_features, dense_hidden), "dense2.b": (n_features,),
    }
    total = sum(int(np.prod(s)) for s in shapes.values())
    payload = np.frombuffer(blob, dtype="<f4", offset=24)
    if payload.size != total:
        raise FormatError(f"{path}: payload holds {payload.size} floats, expected {total}")
    arrays = {}
    pos = 0
    for key, shape in shapes.items():
        n = int(np.prod(shape))
        arrays[key] = payload[pos : pos + n].reshape(shape).astype(dtype)
        pos += n
    model = SurrogateModel(
        encoder=LSTMParams(arrays["encoder.wx"], arrays["encoder.wh"], arrays["encoder.b"]),
        decoder=LSTMParams(arrays["decoder.wx"], arrays["decoder.wh"], arrays["decoder.b"]),
        dense1=DenseParams(arrays["dense1.w"], arrays["dense1.b"], "relu"),
        dense2=DenseParams(arrays["dense2.w"], arrays["dense2.b"], "linear"),
        config=cfg,
    )
    return model
