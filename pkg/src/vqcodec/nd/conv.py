"""1-D and 2-D convolutions with explicit gradients.

Both directions are lowered to a single BLAS matmul against a column
matrix laid out so every gather/scatter runs over long contiguous spans
(columns are ordered channel-and-tap major, positions minor).  The input
gradient scatters per kernel tap into strided views, which is exact and
allocation-light.
"""

from __future__ import annotations

import numpy as np

from vqcodec.errors import ConfigError, ShapeError
from vqcodec.nd.tensor import _as_tensor, _grad_enabled, _make

_as_strided = np.lib.stride_tricks.as_strided


def _out_len(t, k, stride, dilation):
    span = dilation * (k - 1) + 1
    if t < span:
        raise ShapeError(f"kernel span {span} exceeds padded input length {t}")
    return (t - span) // stride + 1


def _cols1d(xp, k, stride, dilation, t_out):
    """[C*K, B*t_out] column matrix of sliding-window taps."""
    b, c, _ = xp.shape
    sb, sc, st = xp.strides
    view = _as_strided(
        xp, (c, k, b, t_out), (sc, st * dilation, sb, st * stride)
    )
    return np.ascontiguousarray(view).reshape(c * k, b * t_out)


def _conv1d_fwd(x, w, b, stride, dilation, padding):
    bsz, c_in, t = x.shape
    c_out, _, k = w.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    t_out = _out_len(x.shape[2], k, stride, dilation)
    cols = _cols1d(x, k, stride, dilation, t_out)
    out = w.reshape(c_out, c_in * k) @ cols
    if b is not None:
        out += b[:, None]
    return np.ascontiguousarray(
        out.reshape(c_out, bsz, t_out).transpose(1, 0, 2)
    )


def _conv1d_bwd_input(dy, w, x_shape, stride, dilation, padding):
    bsz, c_in, t = x_shape
    c_out, _, k = w.shape
    t_out = dy.shape[2]
    dyf = np.ascontiguousarray(dy.transpose(1, 0, 2)).reshape(c_out, bsz * t_out)
    taps = (w.reshape(c_out, c_in * k).T @ dyf).reshape(c_in, k, bsz, t_out)
    dxp = np.zeros((bsz, c_in, t + 2 * padding), dtype=dy.dtype)
    span = stride * (t_out - 1) + 1
    for tap in range(k):
        lo = tap * dilation
        dxp[:, :, lo:lo + span:stride] += taps[:, tap].transpose(1, 0, 2)
    return dxp[:, :, padding:padding + t] if padding else dxp


def conv1d(x, weight, bias=None, stride=1, dilation=1, padding=0):
    """Cross-correlate [B, C_in, T] with kernels [C_out, C_in, K].

    T_out = floor((T + 2*padding - dilation*(K-1) - 1) / stride) + 1.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(
            f"conv1d expects 3-D input and weight, got {x.data.shape}, {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"input channels {x.data.shape[1]} do not match weight C_in {weight.data.shape[1]}"
        )
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigError("stride/dilation must be >= 1 and padding >= 0")
    xd, wd = x.data, weight.data
    bias = _as_tensor(bias, like=x) if bias is not None else None
    bd = bias.data if bias is not None else None
    if bd is not None and bd.shape != (wd.shape[0],):
        raise ShapeError(f"bias shape {bd.shape} does not match C_out {wd.shape[0]}")

    bsz, _, _ = xd.shape
    c_out, c_in, k = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    t_out = _out_len(xp.shape[2], k, stride, dilation)
    cols = _cols1d(xp, k, stride, dilation, t_out)
    out = wd.reshape(c_out, c_in * k) @ cols
    if bd is not None:
        out += bd[:, None]
    data = np.ascontiguousarray(out.reshape(c_out, bsz, t_out).transpose(1, 0, 2))
    # the forward's column matrix doubles as the weight-gradient operand
    cols_kept = cols if (weight.requires_grad and _grad_enabled()) else None

    def bwd(g):
        gx = (
            _conv1d_bwd_input(g, wd, xd.shape, stride, dilation, padding)
            if x.requires_grad else None
        )
        gw = None
        if weight.requires_grad:
            gf = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, bsz * t_out)
            gw = (gf @ cols_kept.T).reshape(c_out, c_in, k)
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2)) if bias.requires_grad else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, bwd)


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution; adjoint of conv1d with the same parameters.

    Input [B, C_in, T], weight [C_in, C_out, K];
    T_out = (T - 1)*stride - 2*padding + K.
    """
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise ShapeError(
            f"conv_transpose1d expects 3-D input and weight, got "
            f"{x.data.shape}, {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"input channels {x.data.shape[1]} do not match weight C_in {weight.data.shape[0]}"
        )
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    c_in, c_out, k = weight.data.shape
    if padding < 0 or padding > k - 1:
        raise ConfigError(f"padding must lie in [0, K-1], got {padding} for K={k}")
    t = x.data.shape[2]
    t_out = (t - 1) * stride - 2 * padding + k
    if t_out <= 0:
        raise ConfigError(f"computed output length {t_out} is not positive")
    xd, wd = x.data, weight.data
    bias = _as_tensor(bias, like=x) if bias is not None else None
    bd = bias.data if bias is not None else None
    if bd is not None and bd.shape != (c_out,):
        raise ShapeError(f"bias shape {bd.shape} does not match C_out {c_out}")

    # scatter per tap: y[:, :, tap + t*stride - padding] += W_tap.T @ x_t
    bsz = xd.shape[0]
    xf = np.ascontiguousarray(xd.transpose(1, 0, 2)).reshape(c_in, bsz * t)
    taps = (wd.reshape(c_in, c_out * k).T @ xf).reshape(c_out, k, bsz, t)
    full = np.zeros((bsz, c_out, (t - 1) * stride + k), dtype=xd.dtype)
    span = stride * (t - 1) + 1
    for tap in range(k):
        full[:, :, tap:tap + span:stride] += taps[:, tap].transpose(1, 0, 2)
    data = full[:, :, padding:padding + t_out] if padding else full
    data = np.ascontiguousarray(data)
    if bd is not None:
        data += bd[None, :, None]

    def bwd(g):
        gx = _conv1d_fwd(g, wd, None, stride, 1, padding) if x.requires_grad else None
        gw = None
        if weight.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
            cols = _cols1d(gp, k, stride, 1, t)
            gw = (xf @ cols.T).reshape(c_in, c_out, k)
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2)) if bias.requires_grad else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, bwd)


# ---------------------------------------------------------------------------
# 2-D convolution (discriminator stacks; no dilation needed)


def _cols2d(xp, kh, kw, sh, sw, h_out, w_out):
    """[C*Kh*Kw, B*h_out*w_out] column matrix."""
    b, c, _, _ = xp.shape
    sb, sc, sy, sx = xp.strides
    view = _as_strided(
        xp,
        (c, kh, kw, b, h_out, w_out),
        (sc, sy, sx, sb, sy * sh, sx * sw),
    )
    return np.ascontiguousarray(view).reshape(c * kh * kw, b * h_out * w_out)


def _conv2d_fwd(x, w, b, stride, padding):
    sh, sw = stride
    ph, pw = padding
    bsz, c_in, _, _ = x.shape
    c_out, _, kh, kw = w.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    h_out = _out_len(x.shape[2], kh, sh, 1)
    w_out = _out_len(x.shape[3], kw, sw, 1)
    cols = _cols2d(x, kh, kw, sh, sw, h_out, w_out)
    out = w.reshape(c_out, -1) @ cols
    if b is not None:
        out += b[:, None]
    return np.ascontiguousarray(
        out.reshape(c_out, bsz, h_out, w_out).transpose(1, 0, 2, 3)
    )


def conv2d(x, weight, bias=None, stride=(1, 1), padding=(0, 0)):
    """Cross-correlate [B, C_in, H, W] with kernels [C_out, C_in, Kh, Kw]."""
    x = _as_tensor(x)
    weight = _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects 4-D input and weight, got {x.data.shape}, {weight.data.shape}"
        )
    if x.data.shape[1] != weight.data.shape[1]:
        raise ShapeError(
            f"input channels {x.data.shape[1]} do not match weight C_in {weight.data.shape[1]}"
        )
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ConfigError("stride must be >= 1 and padding >= 0")
    xd, wd = x.data, weight.data
    bias = _as_tensor(bias, like=x) if bias is not None else None
    bd = bias.data if bias is not None else None
    if bd is not None and bd.shape != (wd.shape[0],):
        raise ShapeError(f"bias shape {bd.shape} does not match C_out {wd.shape[0]}")

    bsz, c_in, h, w = xd.shape
    c_out, _, kh, kw = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
    h_out = _out_len(xp.shape[2], kh, sh, 1)
    w_out = _out_len(xp.shape[3], kw, sw, 1)
    cols = _cols2d(xp, kh, kw, sh, sw, h_out, w_out)
    out = wd.reshape(c_out, -1) @ cols
    if bd is not None:
        out += bd[:, None]
    data = np.ascontiguousarray(
        out.reshape(c_out, bsz, h_out, w_out).transpose(1, 0, 2, 3)
    )
    # the forward's column matrix doubles as the weight-gradient operand
    cols_kept = cols if (weight.requires_grad and _grad_enabled()) else None

    def bwd(g):
        gf = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
        gf = gf.reshape(c_out, bsz * h_out * w_out)
        gx = None
        if x.requires_grad:
            taps = (wd.reshape(c_out, -1).T @ gf)
            taps = taps.reshape(c_in, kh, kw, bsz, h_out, w_out)
            dxp = np.zeros((bsz, c_in, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
            hspan = sh * (h_out - 1) + 1
            wspan = sw * (w_out - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + hspan:sh, j:j + wspan:sw] += \
                        taps[:, i, j].transpose(1, 0, 2, 3)
            gx = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + w]) \
                if (ph or pw) else dxp
        gw = None
        if weight.requires_grad:
            gw = (gf @ cols_kept.T).reshape(wd.shape)
        if bias is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, bwd)
