"""Loop-based reference attention, used only for verification.

These favour clarity over speed: explicit python loops over batch, frame,
window, head and group, with a dense single-matrix attention at the centre.
They read the same weights as the fast modules but share none of their code,
so agreement between the two is evidence that the partitioning, masking,
folding and bias indexing in ``attention.py`` implement the intended math.

Everything here is plain numpy; no Tensor graphs are built.
"""

from __future__ import annotations

import numpy as np


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def dense_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, scale: float,
                    mask: np.ndarray | None = None,
                    bias: np.ndarray | None = None) -> np.ndarray:
    """Single dense attention: q [Lq, D], k [Lk, D], v [Lk, Dv].

    ``mask`` is boolean [Lq, Lk] (True = forbidden), ``bias`` additive
    [Lq, Lk].  Returns [Lq, Dv].
    """
    s = (q @ k.T) * scale
    if bias is not None:
        s = s + bias
    if mask is not None:
        s = np.where(mask, -np.inf, s)
    return _softmax_rows(s) @ v


def temporal_attention_reference(x: np.ndarray, module) -> np.ndarray:
    """Frame-axis attention, one spatial token at a time."""
    spec = module.spec
    w = module.qkv.data
    wo = module.out.data
    b, t, n, c = x.shape
    nh = spec.num_heads
    ch = c // nh
    mask = np.triu(np.ones((t, t), dtype=bool), k=1) if spec.causal else None
    out = np.zeros_like(x)
    for bi in range(b):
        for ni in range(n):
            qkv = x[bi, :, ni, :] @ w  # [T, 3C]
            ctx = np.zeros((t, c), dtype=x.dtype)
            for h in range(nh):
                sl = slice(h * ch, (h + 1) * ch)
                q = qkv[:, 0 * c:1 * c][:, sl]
                k = qkv[:, 1 * c:2 * c][:, sl]
                v = qkv[:, 2 * c:3 * c][:, sl]
                ctx[:, sl] = dense_attention(q, k, v, ch ** -0.5, mask)
            out[bi, :, ni, :] = ctx @ wo
    return out


def spatial_attention_reference(x: np.ndarray, module, grid) -> np.ndarray:
    """Windowed attention, one window at a time, with longhand folding and
    bias lookups."""
    spec = module.spec
    sy, sx = grid
    b, t, n, c = x.shape
    m, r, nh = spec.window, spec.reduction, spec.num_heads
    l = m // r
    kk = l * l
    cr = c // (r * r)
    ch = c // nh
    wq = module.q.data
    wkv = module.kv.data
    wo = module.out.data
    table = module.bias_table.data
    side = 2 * l - 1

    out = np.zeros_like(x)
    for bi in range(b):
        for ti in range(t):
            frame = x[bi, ti].reshape(sy, sx, c)
            for wy in range(sy // m):
                for wx in range(sx // m):
                    win = np.zeros((m * m, c), dtype=x.dtype)
                    for my in range(m):
                        for mx in range(m):
                            win[my * m + mx] = frame[wy * m + my, wx * m + mx]
                    q = win @ wq
                    kv = win @ wkv
                    kred, vred = kv[:, :cr], kv[:, cr:]
                    # fold r x r neighbourhoods into channels, position-major
                    kf = np.zeros((kk, c), dtype=x.dtype)
                    vf = np.zeros((kk, c), dtype=x.dtype)
                    for ly in range(l):
                        for lx in range(l):
                            pos = 0
                            for ry in range(r):
                                for rx in range(r):
                                    src = (ly * r + ry) * m + (lx * r + rx)
                                    kf[ly * l + lx, pos:pos + cr] = kred[src]
                                    vf[ly * l + lx, pos:pos + cr] = vred[src]
                                    pos += cr
                    ctx = np.zeros((m * m, c), dtype=x.dtype)
                    for h in range(nh):
                        col = 0 if table.shape[1] == 1 else h
                        bias = np.zeros((m * m, kk), dtype=x.dtype)
                        for qy in range(m):
                            for qx in range(m):
                                for ky in range(l):
                                    for kx in range(l):
                                        dy = qy // r - ky + l - 1
                                        dx = qx // r - kx + l - 1
                                        bias[qy * m + qx, ky * l + kx] = \
                                            table[dy * side + dx, col]
                        sl = slice(h * ch, (h + 1) * ch)
                        ctx[:, sl] = dense_attention(q[:, sl], kf[:, sl],
                                                     vf[:, sl], ch ** -0.5,
                                                     None, bias)
                    proj = ctx @ wo
                    for my in range(m):
                        for mx in range(m):
                            yy, xx = wy * m + my, wx * m + mx
                            out[bi, ti, yy * sx + xx] = proj[my * m + mx]
    return out


def channel_attention_reference(x: np.ndarray, module, grid) -> np.ndarray:
    """Grouped channel attention with a longhand depthwise position encoding."""
    spec = module.spec
    sy, sx = grid
    b, t, n, c = x.shape
    ng = spec.num_groups
    cg = c // ng
    cw = module.cpe_weight.data  # [C, 1, 3, 3]
    cb = module.cpe_bias.data
    wq, wk, wv, wo = (module.q.data, module.k.data, module.v.data,
                      module.out.data)

    out = np.zeros_like(x)
    for bi in range(b):
        for ti in range(t):
            frame = x[bi, ti].reshape(sy, sx, c)
            pe = np.zeros_like(frame)
            for yy in range(sy):
                for xx in range(sx):
                    acc = cb.copy()
                    for dy in range(3):
                        for dx in range(3):
                            py, px = yy + dy - 1, xx + dx - 1
                            if 0 <= py < sy and 0 <= px < sx:
                                acc = acc + frame[py, px] * cw[:, 0, dy, dx]
                    pe[yy, xx] = acc
            h = (frame + pe).reshape(n, c)
            for gi in range(ng):
                tok = h[:, gi * cg:(gi + 1) * cg]
                q = tok @ wq[gi]
                k = tok @ wk[gi]
                v = tok @ wv[gi]
                s = (q.T @ k) * cg ** -0.5
                a = _softmax_rows(s)
                ctx = v @ a.T
                out[bi, ti, :, gi * cg:(gi + 1) * cg] = ctx @ wo[gi]
    return out
