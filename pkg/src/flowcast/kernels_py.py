"""Pure-numpy implementations of the hot kernels.

This is the fallback backend; `flowcast._kernels` (Cython) implements the
same three entry points with identical semantics. Keep the math here in
lockstep with the .pyx file — the backend cross-check tests compare them.

Gate block order is fixed as (input i, forget f, candidate g, output o)
along the 4H axis. The candidate activation and the cell output activation
are relu; gate activations are sigmoid.
"""

import numpy as np

from .tensor_core import sigmoid


def lstm_seq_forward(seq, wx, wh, b):
    """Run the relu-LSTM recurrence over a whole sequence.

    seq: (T, F); wx: (4H, F); wh: (4H, H); b: (4H,).
    Returns (h, c, gi, gf, gg, go), each of shape (T, H), which is the
    full cache needed by lstm_seq_backward.
    """
    t_len, _ = seq.shape
    hid = wh.shape[1]
    dtype = seq.dtype
    h = np.zeros((t_len, hid), dtype=dtype)
    c = np.zeros((t_len, hid), dtype=dtype)
    gi = np.zeros((t_len, hid), dtype=dtype)
    gf = np.zeros((t_len, hid), dtype=dtype)
    gg = np.zeros((t_len, hid), dtype=dtype)
    go = np.zeros((t_len, hid), dtype=dtype)
    h_prev = np.zeros(hid, dtype=dtype)
    c_prev = np.zeros(hid, dtype=dtype)
    for t in range(t_len):
        z = wx @ seq[t] + wh @ h_prev + b
        gi[t] = sigmoid(z[:hid])
        gf[t] = sigmoid(z[hid : 2 * hid])
        gg[t] = np.maximum(z[2 * hid : 3 * hid], 0)
        go[t] = sigmoid(z[3 * hid :])
        c[t] = gf[t] * c_prev + gi[t] * gg[t]
        h[t] = go[t] * np.maximum(c[t], 0)
        h_prev = h[t]
        c_prev = c[t]
    return h, c, gi, gf, gg, go


def lstm_seq_backward(seq, wx, wh, h, c, gi, gf, gg, go, dh_seq):
    """Reverse-mode pass matching lstm_seq_forward.

    dh_seq: (T, H) upstream gradient on every hidden state (zero rows for
    timesteps without a direct loss contribution).
    Returns (dwx, dwh, db, dseq).
    """
    t_len, hid = h.shape
    dtype = seq.dtype
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * hid, dtype=dtype)
    dseq = np.zeros_like(seq)
    dh_next = np.zeros(hid, dtype=dtype)
    dc_next = np.zeros(hid, dtype=dtype)
    dz = np.zeros(4 * hid, dtype=dtype)
    for t in range(t_len - 1, -1, -1):
        c_prev = c[t - 1] if t > 0 else np.zeros(hid, dtype=dtype)
        h_prev = h[t - 1] if t > 0 else np.zeros(hid, dtype=dtype)
        dh = dh_seq[t] + dh_next
        relu_c = np.maximum(c[t], 0)
        do = dh * relu_c
        dc = dh * go[t] * (c[t] > 0) + dc_next
        df = dc * c_prev
        di = dc * gg[t]
        dg = dc * gi[t]
        dz[:hid] = di * gi[t] * (1 - gi[t])
        dz[hid : 2 * hid] = df * gf[t] * (1 - gf[t])
        dz[2 * hid : 3 * hid] = dg * (gg[t] > 0)
        dz[3 * hid :] = do * go[t] * (1 - go[t])
        dwx += np.outer(dz, seq[t])
        dwh += np.outer(dz, h_prev)
        db += dz
        dseq[t] = wx.T @ dz
        dh_next = wh.T @ dz
        dc_next = dc * gf[t]
    return dwx, dwh, db, dseq


def advect_diffuse(u, dt, nu, cell_size, advect):
    """One explicit step of upwind self-advection plus flux-form diffusion.

    u: (H, W, 2) velocity field; returns a new array. No boundary forcing
    here — the solver applies inlet/recirculation/no-slip on top. The
    diffusion term is written in flux form with zero-flux domain edges, so
    with advect=False the per-component sum is conserved exactly.
    """
    out = u.copy()

    lap = np.zeros_like(u)
    d0 = u[1:, :, :] - u[:-1, :, :]
    lap[:-1] += d0
    lap[1:] -= d0
    d1 = u[:, 1:, :] - u[:, :-1, :]
    lap[:, :-1] += d1
    lap[:, 1:] -= d1
    out += (dt * nu / cell_size**2) * lap

    if advect:
        ux = u[:, :, 0]
        uy = u[:, :, 1]
        inv_h = 1.0 / cell_size
        for k in range(u.shape[2]):
            comp = u[:, :, k]
            back_x = np.zeros_like(comp)
            back_x[:, 1:] = comp[:, 1:] - comp[:, :-1]
            fwd_x = np.zeros_like(comp)
            fwd_x[:, :-1] = comp[:, 1:] - comp[:, :-1]
            back_y = np.zeros_like(comp)
            back_y[1:, :] = comp[1:, :] - comp[:-1, :]
            fwd_y = np.zeros_like(comp)
            fwd_y[:-1, :] = comp[1:, :] - comp[:-1, :]
            dcdx = np.where(ux > 0, back_x, fwd_x) * inv_h
            dcdy = np.where(uy > 0, back_y, fwd_y) * inv_h
            out[:, :, k] -= dt * (ux * dcdx + uy * dcdy)

    return out
