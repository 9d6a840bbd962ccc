"""2-d convolution and transposed convolution for the autodiff engine.

Layouts follow the channels-first convention:

* ``conv2d``: input [B, Cin, H, W], weight [Cout, Cin/groups, kh, kw].
* ``conv_transpose2d``: input [B, Cin, H, W], weight [Cin, Cout, kh, kw].

Strides and padding are single integers applied to both spatial axes, and the
kernel must fit the padded input exactly: (H + 2p - kh) must be a nonnegative
multiple of the stride.  An inexact fit raises ShapeError instead of silently
dropping rows, so a conv2d followed by the matching conv_transpose2d always
restores the original spatial extent.

Forward kernels reduce to matrix products over im2col views (a grouped loop
or a depthwise einsum where that is cheaper); backward passes reuse the same
primitives, with the input gradient of conv2d computed as a transposed
convolution of the output gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _accum, _from_op

__all__ = ["conv2d", "conv_transpose2d", "pad2d"]


def pad2d(x: Tensor, pads) -> Tensor:
    """Zero-pad the last two axes of a 4-d tensor by (top, bottom, left,
    right).  The backward pass slices the padding back off."""
    top, bottom, left, right = (int(p) for p in pads)
    if min(top, bottom, left, right) < 0:
        raise ShapeError(f"pad2d: negative padding {pads}")
    if x.ndim != 4:
        raise ShapeError(f"pad2d: input must be 4-d, got {x.shape}")
    if top == bottom == left == right == 0:
        return x
    data = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    h, w = x.shape[2], x.shape[3]

    def backward(g):
        _accum(x, g[:, :, top:top + h, left:left + w])

    return _from_op(data, (x,), backward)


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided [B, C, Ho, Wo, kh, kw] view of every kernel placement."""
    v = sliding_window_view(x, (kh, kw), axis=(2, 3))
    if stride > 1:
        v = v[:, :, ::stride, ::stride]
    return v


def _gemm_conv(win: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Contract an im2col view with a [Cout, C, kh, kw] kernel."""
    b, c, ho, wo, kh, kw = win.shape
    col = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * kh * kw)
    out = col @ w.reshape(w.shape[0], -1).T
    return np.ascontiguousarray(
        out.reshape(b, ho, wo, w.shape[0]).transpose(0, 3, 1, 2))


def _is_depthwise(x_channels: int, w_shape, groups: int) -> bool:
    cout, cpg, _, _ = w_shape
    return groups == x_channels and cpg == 1 and cout == x_channels


def _tap(xp: np.ndarray, i: int, j: int, ho: int, wo: int, s: int) -> np.ndarray:
    """The input slice seen by kernel tap (i, j) across all placements."""
    return xp[:, :, i:i + (ho - 1) * s + 1:s, j:j + (wo - 1) * s + 1:s]


def _depthwise_raw(x: np.ndarray, w: np.ndarray, stride: int,
                   padding: int) -> np.ndarray:
    """Depthwise conv as k*k shifted multiply-adds; far cheaper than im2col
    when nothing mixes across channels."""
    xp = _pad2d(x, padding)
    _, _, kh, kw = w.shape
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    out = np.zeros((x.shape[0], x.shape[1], ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += w[None, :, 0, i, j, None, None] * _tap(xp, i, j, ho, wo, stride)
    return out


def _depthwise_dx(g: np.ndarray, w: np.ndarray, stride: int, padding: int,
                  in_shape) -> np.ndarray:
    b, c, h, wd = in_shape
    _, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    dxp = np.zeros((b, c, h + 2 * padding, wd + 2 * padding), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            _tap(dxp, i, j, ho, wo, stride)[...] += w[None, :, 0, i, j, None, None] * g
    if padding:
        return dxp[:, :, padding:padding + h, padding:padding + wd]
    return dxp


def _depthwise_dw(x: np.ndarray, g: np.ndarray, w_shape, stride: int,
                  padding: int) -> np.ndarray:
    xp = _pad2d(x, padding)
    _, _, kh, kw = w_shape
    ho, wo = g.shape[2], g.shape[3]
    dw = np.empty(w_shape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dw[:, 0, i, j] = (g * _tap(xp, i, j, ho, wo, stride)).sum(axis=(0, 2, 3))
    return dw


def _conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                groups: int) -> np.ndarray:
    cout, cpg, kh, kw = w.shape
    cin = x.shape[1]
    if _is_depthwise(cin, w.shape, groups):
        return _depthwise_raw(x, w, stride, padding)
    win = _windows(_pad2d(x, padding), kh, kw, stride)
    if groups == 1:
        return _gemm_conv(win, w)
    cog = cout // groups
    parts = []
    for gi in range(groups):
        parts.append(_gemm_conv(win[:, gi * cpg:(gi + 1) * cpg],
                                w[gi * cog:(gi + 1) * cog]))
    return np.concatenate(parts, axis=1)


def _conv2d_dw(x: np.ndarray, g: np.ndarray, w_shape, stride: int,
               padding: int, groups: int) -> np.ndarray:
    """Kernel gradient: correlate the padded input with the output gradient."""
    cout, cpg, kh, kw = w_shape
    cin = x.shape[1]
    if _is_depthwise(cin, w_shape, groups):
        return _depthwise_dw(x, g, w_shape, stride, padding)
    win = _windows(_pad2d(x, padding), kh, kw, stride)
    if groups == 1:
        return np.einsum("bohw,bchwij->ocij", g, win, optimize=True)
    cog = cout // groups
    dw = np.empty(w_shape, dtype=g.dtype)
    for gi in range(groups):
        dw[gi * cog:(gi + 1) * cog] = np.einsum(
            "bohw,bchwij->ocij", g[:, gi * cog:(gi + 1) * cog],
            win[:, gi * cpg:(gi + 1) * cpg], optimize=True)
    return dw


def _conv_transpose2d_raw(x: np.ndarray, w: np.ndarray, stride: int,
                          padding: int) -> np.ndarray:
    """Transposed convolution, weight layout [Cin, Cout, kh, kw].

    Computed as: dilate the input by the stride, pad by (k - 1 - padding),
    then correlate at stride 1 with the spatially flipped kernel.  Negative
    effective padding (padding > k - 1) crops instead.
    """
    b, cin, h, wdim = x.shape
    _, cout, kh, kw = w.shape
    if padding == 0 and stride == kh == kw:
        # non-overlapping placement (patch expansion): every output pixel
        # comes from exactly one input pixel, so this is one GEMM plus a
        # reshuffle instead of a dilated correlation.
        t = np.tensordot(x, w, axes=([1], [0]))  # [B, H, W, Cout, kh, kw]
        t = t.transpose(0, 3, 1, 4, 2, 5)
        return np.ascontiguousarray(t).reshape(b, cout, h * kh, wdim * kw)
    if stride > 1:
        d = np.zeros((b, cin, (h - 1) * stride + 1, (wdim - 1) * stride + 1),
                     dtype=x.dtype)
        d[:, :, ::stride, ::stride] = x
    else:
        d = x
    ph, pw = kh - 1 - padding, kw - 1 - padding
    d = np.pad(d, ((0, 0), (0, 0), (max(ph, 0),) * 2, (max(pw, 0),) * 2))
    if ph < 0:
        d = d[:, :, -ph:ph, :]
    if pw < 0:
        d = d[:, :, :, -pw:pw]
    flipped = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # [Cout, Cin, kh, kw]
    return _gemm_conv(sliding_window_view(d, (kh, kw), axis=(2, 3)), flipped)


def _conv_transpose2d_dw(x: np.ndarray, g: np.ndarray, w_shape, stride: int,
                         padding: int) -> np.ndarray:
    _, _, kh, kw = w_shape
    win = _windows(_pad2d(g, padding), kh, kw, stride)
    return np.einsum("bchw,bohwij->coij", x, win, optimize=True)


def _check_common(x: Tensor, w: Tensor, bias, stride: int, padding: int, op: str):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(
            f"{op}: input and weight must be 4-d, got {x.shape} and {w.shape}")
    if not isinstance(stride, int) or not isinstance(padding, int):
        raise TypeError(f"{op}: stride and padding must be ints")
    if stride < 1 or padding < 0:
        raise ShapeError(f"{op}: stride {stride} / padding {padding} out of range")
    if x.dtype != w.dtype:
        raise TypeError(f"{op}: input dtype {x.dtype} and weight dtype {w.dtype} must match")
    if bias is not None and bias.dtype != x.dtype:
        raise TypeError(f"{op}: bias dtype {bias.dtype} does not match input {x.dtype}")


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-d convolution (cross-correlation, as is conventional)."""
    _check_common(x, w, bias, stride, padding, "conv2d")
    b, cin, h, wid = x.shape
    cout, cpg, kh, kw = w.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(
            f"conv2d: groups={groups} must divide Cin={cin} and Cout={cout}")
    if cpg != cin // groups:
        raise ShapeError(
            f"conv2d: weight {w.shape} expects Cin {cpg * groups}, input has {cin}")
    for extent, k in ((h, kh), (wid, kw)):
        span = extent + 2 * padding - k
        if span < 0 or span % stride:
            raise ShapeError(
                f"conv2d: kernel {(kh, kw)} with stride {stride}, padding {padding} "
                f"does not fit input {x.shape} exactly")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} must be ({cout},)")

    data = _conv2d_raw(x.data, w.data, stride, padding, groups)
    if bias is not None:
        data += bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        if x.requires_grad:
            if groups == 1:
                gx = _conv_transpose2d_raw(g, w.data, stride, padding)
            elif _is_depthwise(cin, w.shape, groups):
                gx = _depthwise_dx(g, w.data, stride, padding, x.shape)
            else:
                cog = cout // groups
                gx = np.concatenate([
                    _conv_transpose2d_raw(g[:, gi * cog:(gi + 1) * cog],
                                          w.data[gi * cog:(gi + 1) * cog],
                                          stride, padding)
                    for gi in range(groups)], axis=1)
            _accum(x, gx, fresh=True)
        if w.requires_grad:
            _accum(w, _conv2d_dw(x.data, g, w.shape, stride, padding, groups),
                   fresh=True)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)), fresh=True)

    parents = (x, w) if bias is None else (x, w, bias)
    return _from_op(data, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 2-d convolution, the adjoint of conv2d with the same
    stride and padding.  Output extent is (H - 1) * stride - 2 * padding + k.
    Grouped transposed convolution is not supported."""
    _check_common(x, w, bias, stride, padding, "conv_transpose2d")
    b, cin, h, wid = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(
            f"conv_transpose2d: weight {w.shape} expects Cin {wcin}, input has {cin}")
    for extent, k in ((h, kh), (wid, kw)):
        if (extent - 1) * stride - 2 * padding + k < 1:
            raise ShapeError(
                f"conv_transpose2d: output extent collapses for input {x.shape}, "
                f"kernel {(kh, kw)}, stride {stride}, padding {padding}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} must be ({cout},)")

    data = _conv_transpose2d_raw(x.data, w.data, stride, padding)
    if bias is not None:
        data += bias.data.reshape(1, -1, 1, 1)

    def backward(g):
        if x.requires_grad:
            # adjoint of the adjoint: a plain convolution of the gradient.
            # The [Cin, Cout, kh, kw] layout is already what _conv2d_raw
            # expects for producing Cin channels from Cout ones.
            _accum(x, _conv2d_raw(g, w.data, stride, padding, 1), fresh=True)
        if w.requires_grad:
            _accum(w, _conv_transpose2d_dw(x.data, g, w.shape, stride, padding),
                   fresh=True)
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3)), fresh=True)

    parents = (x, w) if bias is None else (x, w, bias)
    return _from_op(data, parents, backward)
