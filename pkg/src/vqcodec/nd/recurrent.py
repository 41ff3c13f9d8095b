"""Unidirectional LSTM with backpropagation through time.

The recurrence runs over preallocated buffers with ``out=`` kernels; gate
order along the 4H axis is (input, forget, output, cell) so the three
sigmoids fuse into one contiguous slice.
"""

from __future__ import annotations

import numpy as np

from vqcodec.errors import ShapeError
from vqcodec.nd.tensor import _as_tensor, _make


def _sigmoid_inplace(buf):
    # 1/(1+exp(-x)); exp overflow for very negative x saturates to 0 exactly
    np.negative(buf, out=buf)
    np.exp(buf, out=buf)
    buf += 1.0
    np.reciprocal(buf, out=buf)


def _lstm_layer(x, w_x, w_h, b):
    """One LSTM layer over [B, T, D] -> [B, T, H].

    Initial hidden and cell states are zero; output at step t depends only
    on inputs up to t.
    """
    x = _as_tensor(x)
    w_x = _as_tensor(w_x)
    w_h = _as_tensor(w_h)
    b = _as_tensor(b)
    xd, wxd, whd, bd = x.data, w_x.data, w_h.data, b.data
    if xd.ndim != 3:
        raise ShapeError(f"lstm expects [B, T, D], got {xd.shape}")
    bsz, t_len, d_in = xd.shape
    h_dim = whd.shape[0]
    if wxd.shape != (d_in, 4 * h_dim) or whd.shape != (h_dim, 4 * h_dim) \
            or bd.shape != (4 * h_dim,):
        raise ShapeError(
            f"lstm parameter shapes {wxd.shape}/{whd.shape}/{bd.shape} do not "
            f"match D={d_in}, H={h_dim}"
        )
    h3 = 3 * h_dim

    zx = xd.reshape(bsz * t_len, d_in) @ wxd
    zx += bd
    zx = zx.reshape(bsz, t_len, 4 * h_dim)

    gates = np.empty((t_len, bsz, 4 * h_dim), dtype=xd.dtype)
    cs = np.empty((t_len, bsz, h_dim), dtype=xd.dtype)
    tc = np.empty_like(cs)
    h_prev = np.empty_like(cs)
    out = np.empty((bsz, t_len, h_dim), dtype=xd.dtype)

    h = np.zeros((bsz, h_dim), dtype=xd.dtype)
    c = np.zeros((bsz, h_dim), dtype=xd.dtype)
    zbuf = np.empty((bsz, 4 * h_dim), dtype=xd.dtype)
    ig = np.empty((bsz, h_dim), dtype=xd.dtype)
    with np.errstate(over="ignore"):
        for t in range(t_len):
            h_prev[t] = h
            np.matmul(h, whd, out=zbuf)
            zbuf += zx[:, t]
            gt = gates[t]
            gt[:] = zbuf
            _sigmoid_inplace(gt[:, :h3])
            np.tanh(zbuf[:, h3:], out=gt[:, h3:])
            i = gt[:, :h_dim]
            f = gt[:, h_dim:2 * h_dim]
            o = gt[:, 2 * h_dim:h3]
            g = gt[:, h3:]
            np.multiply(f, c, out=cs[t])
            np.multiply(i, g, out=ig)
            cs[t] += ig
            c = cs[t]
            np.tanh(c, out=tc[t])
            np.multiply(o, tc[t], out=out[:, t, :])
            h = out[:, t, :]

    def bwd(grad_out):
        dz = np.empty((t_len, bsz, 4 * h_dim), dtype=xd.dtype)
        dh = np.zeros((bsz, h_dim), dtype=xd.dtype)
        dct = np.empty((bsz, h_dim), dtype=xd.dtype)
        dc = np.zeros((bsz, h_dim), dtype=xd.dtype)
        dh_t = np.empty((bsz, h_dim), dtype=xd.dtype)
        for t in range(t_len - 1, -1, -1):
            np.add(grad_out[:, t, :], dh, out=dh_t)
            gt = gates[t]
            i = gt[:, :h_dim]
            f = gt[:, h_dim:2 * h_dim]
            o = gt[:, 2 * h_dim:h3]
            g = gt[:, h3:]
            dz_t = dz[t]
            dzi = dz_t[:, :h_dim]
            dzf = dz_t[:, h_dim:2 * h_dim]
            dzo = dz_t[:, 2 * h_dim:h3]
            dzg = dz_t[:, h3:]
            # dct = dh*o*(1-tanh(c)^2) + carried dc
            np.multiply(tc[t], tc[t], out=dct)
            np.subtract(1.0, dct, out=dct)
            dct *= o
            dct *= dh_t
            dct += dc
            # output gate: dzo = dh*tanh(c) * o*(1-o)
            np.subtract(1.0, o, out=dzo)
            dzo *= o
            dzo *= tc[t]
            dzo *= dh_t
            # input gate: dzi = dct*g * i*(1-i)
            np.subtract(1.0, i, out=dzi)
            dzi *= i
            dzi *= g
            dzi *= dct
            # forget gate: dzf = dct*c_prev * f*(1-f)
            np.subtract(1.0, f, out=dzf)
            dzf *= f
            if t > 0:
                dzf *= cs[t - 1]
                np.multiply(dct, f, out=dc)
            else:
                dzf[:] = 0.0
                dc[:] = 0.0
            dzf *= dct
            # cell candidate: dzg = dct*i*(1-g^2)
            np.multiply(g, g, out=dzg)
            np.subtract(1.0, dzg, out=dzg)
            dzg *= i
            dzg *= dct
            np.matmul(dz_t, whd.T, out=dh)
        dz_bt = np.ascontiguousarray(dz.transpose(1, 0, 2))
        gx = None
        if x.requires_grad:
            gx = (dz_bt.reshape(bsz * t_len, 4 * h_dim) @ wxd.T).reshape(xd.shape)
        gwx = None
        if w_x.requires_grad:
            gwx = xd.reshape(bsz * t_len, d_in).T @ dz_bt.reshape(bsz * t_len, 4 * h_dim)
        gwh = None
        if w_h.requires_grad:
            gwh = h_prev.reshape(t_len * bsz, h_dim).T @ dz.reshape(t_len * bsz, 4 * h_dim)
        gb = dz.sum(axis=(0, 1)) if b.requires_grad else None
        return (gx, gwx, gwh, gb)

    return _make(out, (x, w_x, w_h, b), bwd)


def lstm_forward(x, layer_params):
    """Stacked unidirectional LSTM.

    ``layer_params`` is a sequence of (w_x [D,4H], w_h [H,4H], b [4H])
    tuples, one per layer; the output of each layer feeds the next.
    """
    if not layer_params:
        raise ShapeError("lstm_forward needs at least one layer")
    out = x
    for w_x, w_h, b in layer_params:
        out = _lstm_layer(out, w_x, w_h, b)
    return out
