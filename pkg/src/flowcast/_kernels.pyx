# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: relu-LSTM sequence forward/backward and the
explicit advection-diffusion stencil.

Semantics must stay in lockstep with kernels_py.py; the backend
cross-check tests compare the two implementations directly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline real _sigmoid(real z) noexcept nogil:
    cdef real e
    if z >= 0:
        return <real>(1.0 / (1.0 + exp(-z)))
    e = <real>exp(z)
    return <real>(e / (1.0 + e))


def lstm_seq_forward(real[:, ::1] seq, real[:, ::1] wx, real[:, ::1] wh, real[::1] b):
    cdef Py_ssize_t t_len = seq.shape[0]
    cdef Py_ssize_t n_feat = seq.shape[1]
    cdef Py_ssize_t hid = wh.shape[1]
    dtype = np.float32 if real is float else np.float64
    h_np = np.zeros((t_len, hid), dtype=dtype)
    c_np = np.zeros((t_len, hid), dtype=dtype)
    gi_np = np.zeros((t_len, hid), dtype=dtype)
    gf_np = np.zeros((t_len, hid), dtype=dtype)
    gg_np = np.zeros((t_len, hid), dtype=dtype)
    go_np = np.zeros((t_len, hid), dtype=dtype)
    z_np = np.zeros(4 * hid, dtype=dtype)
    cdef real[:, ::1] h = h_np
    cdef real[:, ::1] c = c_np
    cdef real[:, ::1] gi = gi_np
    cdef real[:, ::1] gf = gf_np
    cdef real[:, ::1] gg = gg_np
    cdef real[:, ::1] go = go_np
    cdef real[::1] z = z_np
    cdef Py_ssize_t t, j, k
    cdef real acc, cv
    with nogil:
        for t in range(t_len):
            for j in range(4 * hid):
                acc = b[j]
                for k in range(n_feat):
                    acc += wx[j, k] * seq[t, k]
                if t > 0:
                    for k in range(hid):
                        acc += wh[j, k] * h[t - 1, k]
                z[j] = acc
            for j in range(hid):
                gi[t, j] = _sigmoid(z[j])
                gf[t, j] = _sigmoid(z[hid + j])
                gg[t, j] = z[2 * hid + j] if z[2 * hid + j] > 0 else <real>0.0
                go[t, j] = _sigmoid(z[3 * hid + j])
                cv = gi[t, j] * gg[t, j]
                if t > 0:
                    cv += gf[t, j] * c[t - 1, j]
                c[t, j] = cv
                h[t, j] = go[t, j] * (cv if cv > 0 else <real>0.0)
    return h_np, c_np, gi_np, gf_np, gg_np, go_np


def lstm_seq_backward(real[:, ::1] seq, real[:, ::1] wx, real[:, ::1] wh,
                      real[:, ::1] h, real[:, ::1] c,
                      real[:, ::1] gi, real[:, ::1] gf, real[:, ::1] gg, real[:, ::1] go,
                      real[:, ::1] dh_seq):
    cdef Py_ssize_t t_len = seq.shape[0]
    cdef Py_ssize_t n_feat = seq.shape[1]
    cdef Py_ssize_t hid = wh.shape[1]
    dtype = np.float32 if real is float else np.float64
    dwx_np = np.zeros((4 * hid, n_feat), dtype=dtype)
    dwh_np = np.zeros((4 * hid, hid), dtype=dtype)
    db_np = np.zeros(4 * hid, dtype=dtype)
    dseq_np = np.zeros((t_len, n_feat), dtype=dtype)
    scratch = np.zeros((4, hid), dtype=dtype)
    dz_np = np.zeros(4 * hid, dtype=dtype)
    cdef real[:, ::1] dwx = dwx_np
    cdef real[:, ::1] dwh = dwh_np
    cdef real[::1] db = db_np
    cdef real[:, ::1] dseq = dseq_np
    cdef real[:, ::1] sc = scratch
    cdef real[::1] dz = dz_np
    cdef Py_ssize_t t, j, k
    cdef real dh, dc, relu_c, c_prev, acc
    with nogil:
        # sc[0] = dh_next, sc[1] = dc_next
        for j in range(hid):
            sc[0, j] = 0
            sc[1, j] = 0
        for t in range(t_len - 1, -1, -1):
            for j in range(hid):
                dh = dh_seq[t, j] + sc[0, j]
                relu_c = c[t, j] if c[t, j] > 0 else <real>0.0
                dc = sc[1, j]
                if c[t, j] > 0:
                    dc += dh * go[t, j]
                c_prev = c[t - 1, j] if t > 0 else <real>0.0
                dz[j] = dc * gg[t, j] * gi[t, j] * (<real>1.0 - gi[t, j])
                dz[hid + j] = dc * c_prev * gf[t, j] * (<real>1.0 - gf[t, j])
                dz[2 * hid + j] = dc * gi[t, j] if gg[t, j] > 0 else <real>0.0
                dz[3 * hid + j] = dh * relu_c * go[t, j] * (<real>1.0 - go[t, j])
                sc[1, j] = dc * gf[t, j]
            for j in range(4 * hid):
                db[j] += dz[j]
                for k in range(n_feat):
                    dwx[j, k] += dz[j] * seq[t, k]
                if t > 0:
                    for k in range(hid):
                        dwh[j, k] += dz[j] * h[t - 1, k]
            for k in range(n_feat):
                acc = 0
                for j in range(4 * hid):
                    acc += wx[j, k] * dz[j]
                dseq[t, k] = acc
            for j in range(hid):
                acc = 0
                for k in range(4 * hid):
                    acc += wh[k, j] * dz[k]
                sc[0, j] = acc
    return dwx_np, dwh_np, db_np, dseq_np


def advect_diffuse(real[:, :, ::1] u, double dt, double nu, double cell_size, bint advect):
    cdef Py_ssize_t nh = u.shape[0]
    cdef Py_ssize_t nw = u.shape[1]
    cdef Py_ssize_t nd = u.shape[2]
    dtype = np.float32 if real is float else np.float64
    out_np = np.zeros((nh, nw, nd), dtype=dtype)
    cdef real[:, :, ::1] out = out_np
    cdef Py_ssize_t i, j, k
    cdef real kd = <real>(dt * nu / (cell_size * cell_size))
    cdef real inv_h = <real>(1.0 / cell_size)
    cdef real rdt = <real>dt
    cdef real lap, grad_x, grad_y, ux, uy
    with nogil:
        for i in range(nh):
            for j in range(nw):
                for k in range(nd):
                    lap = 0
                    if i > 0:
                        lap += u[i - 1, j, k] - u[i, j, k]
                    if i < nh - 1:
                        lap += u[i + 1, j, k] - u[i, j, k]
                    if j > 0:
                        lap += u[i, j - 1, k] - u[i, j, k]
                    if j < nw - 1:
                        lap += u[i, j + 1, k] - u[i, j, k]
                    out[i, j, k] = u[i, j, k] + kd * lap
        if advect:
            for i in range(nh):
                for j in range(nw):
                    ux = u[i, j, 0]
                    uy = u[i, j, 1]
                    for k in range(nd):
                        if ux > 0:
                            grad_x = (u[i, j, k] - u[i, j - 1, k]) if j > 0 else <real>0.0
                        else:
                            grad_x = (u[i, j + 1, k] - u[i, j, k]) if j < nw - 1 else <real>0.0
                        if uy > 0:
                            grad_y = (u[i, j, k] - u[i - 1, j, k]) if i > 0 else <real>0.0
                        else:
                            grad_y = (u[i + 1, j, k] - u[i, j, k]) if i < nh - 1 else <real>0.0
                        out[i, j, k] -= rdt * (ux * grad_x * inv_h + uy * grad_y * inv_h)
    return out_np
