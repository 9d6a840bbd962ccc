"""The three factorized attention mechanisms.

All three consume a token grid shaped [B, T, N, C] (batch, frames, spatial
tokens, channels) plus the latent grid extents, and return the same shape.
Each mixes along exactly one axis:

* temporal attention along T, masked so a frame attends only to itself and
  earlier frames;
* spatial attention within fixed M x M windows of each frame, with keys and
  values reduced r-fold per side before attending;
* channel attention across the channels of each group, per frame.

Composing the three covers the full (T, N, C) volume at a fraction of the
cost of dense attention over T*N tokens.  Output projections start at zero,
so a freshly initialized mechanism contributes nothing to its residual
stream.

Modules register parameters in a ParameterStore under a caller-chosen
prefix and hold references to the resulting tensors; they own no other
state.  Loop-based reference implementations for verification live in
``reference.py``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import conv, tensor
from .params import ParameterStore, trunc_normal
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class AttentionSpec:
    """Shared hyperparameters of the three mechanisms.

    embed_dim:   token channels C
    num_heads:   heads for temporal and spatial attention
    window:      spatial window side M, in tokens
    reduction:   spatial key/value reduction factor r per side
    num_groups:  channel attention groups
    causal:      mask temporal attention to past and present frames
    bias_shared: one relative position bias table shared by all heads
    """

    embed_dim: int
    num_heads: int = 4
    window: int = 4
    reduction: int = 2
    num_groups: int = 8
    causal: bool = True
    bias_shared: bool = False

    def __post_init__(self):
        c, nh, m, r, ng = (self.embed_dim, self.num_heads, self.window,
                           self.reduction, self.num_groups)
        if c % nh:
            raise ShapeError(f"embed_dim {c} must divide into {nh} heads")
        if r < 1 or m % r:
            raise ShapeError(f"window {m} must be a multiple of reduction {r}")
        if c % (r * r):
            raise ShapeError(f"embed_dim {c} must be divisible by reduction^2 ({r * r})")
        if c % ng:
            raise ShapeError(f"embed_dim {c} must divide into {ng} channel groups")


def causal_mask(t: int) -> np.ndarray:
    """Boolean [T, T] mask, True where key frame j is later than query i."""
    return np.triu(np.ones((t, t), dtype=bool), k=1)


def window_partition(x: Tensor, grid, m: int) -> Tensor:
    """Cut [B, T, N, C] tokens into [B, T, nw, M^2, C] windows.

    Windows are enumerated row-major over the grid, positions row-major
    inside each window.  ``window_merge`` is the exact inverse.
    """
    sy, sx = grid
    b, t, n, c = x.shape
    py, px = sy // m, sx // m
    return (x.reshape(b, t, py, m, px, m, c)
             .permute(0, 1, 2, 4, 3, 5, 6)
             .reshape(b, t, py * px, m * m, c))


def window_merge(xw: Tensor, grid, m: int) -> Tensor:
    """Inverse of ``window_partition``."""
    sy, sx = grid
    b, t, nw, mm, c = xw.shape
    py, px = sy // m, sx // m
    return (xw.reshape(b, t, py, px, m, m, c)
              .permute(0, 1, 2, 4, 3, 5, 6)
              .reshape(b, t, sy * sx, c))


def token_unshuffle(xw: Tensor, m: int, r: int) -> Tensor:
    """Space-to-depth inside each window: [.., M^2, C'] tokens become
    [.., M^2 / r^2, C' * r^2], stacking each r x r neighbourhood
    position-major into the channel axis."""
    b, t, nw, mm, c0 = xw.shape
    l = m // r
    return (xw.reshape(b, t, nw, l, r, l, r, c0)
              .permute(0, 1, 2, 3, 5, 4, 6, 7)
              .reshape(b, t, nw, l * l, r * r * c0))


def token_shuffle(xw: Tensor, m: int, r: int) -> Tensor:
    """Inverse of ``token_unshuffle``."""
    b, t, nw, ll, c = xw.shape
    l = m // r
    c0 = c // (r * r)
    return (xw.reshape(b, t, nw, l, l, r, r, c0)
              .permute(0, 1, 2, 3, 5, 4, 6, 7)
              .reshape(b, t, nw, m * m, c0))


class TemporalAttention:
    """Per-token multi-head attention over the frame axis.

    Token (t, n) exchanges information with tokens (t', n) only; with
    ``causal`` set, additionally t' <= t.  Scores are scaled by the inverse
    square root of the head width.
    """

    def __init__(self, store: ParameterStore, prefix: str, spec: AttentionSpec,
                 rng: np.random.Generator):
        c = spec.embed_dim
        self.spec = spec
        self.qkv = store.add(f"{prefix}.qkv", trunc_normal(rng, (c, 3 * c)))
        self.out = store.add(f"{prefix}.out", np.zeros((c, c)))

    def __call__(self, x: Tensor, grid) -> Tensor:
        spec = self.spec
        b, t, n, c = x.shape
        nh = spec.num_heads
        ch = c // nh

        qkv = tensor.matmul(x, self.qkv)
        heads = []
        for i in range(3):
            part = tensor.narrow(qkv, -1, i * c, c)
            part = part.reshape(b, t, n, nh, ch).permute(0, 2, 3, 1, 4)
            heads.append(part)  # [B, N, nh, T, ch]
        q, k, v = heads

        scores = tensor.matmul(q, k.permute(0, 1, 2, 4, 3))
        scores = tensor.scale(scores, ch ** -0.5)
        if spec.causal:
            scores = tensor.masked_fill(scores, causal_mask(t), -np.inf)
        attn = tensor.softmax(scores, axis=-1)
        ctx = tensor.matmul(attn, v)  # [B, N, nh, T, ch]
        ctx = ctx.permute(0, 3, 1, 2, 4).reshape(b, t, n, c)
        return tensor.matmul(ctx, self.out)


class SpatialAttention:
    """Windowed attention within each frame, with reduced keys and values.

    The frame's token grid is cut into M x M windows.  Queries are one per
    token; keys and values are first projected to C / r^2 channels and then
    r x r neighbourhoods are folded into single tokens of C channels, so
    each window attends to M^2 / r^2 positions instead of M^2.  A learned
    relative position bias (per head, or one table shared across heads)
    is added to the scores; the offset between a query token and a reduced
    key position is measured on the reduced grid.
    """

    def __init__(self, store: ParameterStore, prefix: str, spec: AttentionSpec,
                 rng: np.random.Generator):
        c = spec.embed_dim
        r = spec.reduction
        cr = c // (r * r)
        self.spec = spec
        self.q = store.add(f"{prefix}.q", trunc_normal(rng, (c, c)))
        self.kv = store.add(f"{prefix}.kv", trunc_normal(rng, (c, 2 * cr)))
        self.out = store.add(f"{prefix}.out", np.zeros((c, c)))
        ntab = 1 if spec.bias_shared else spec.num_heads
        side = 2 * (spec.window // r) - 1
        self.bias_table = store.add(f"{prefix}.bias_table",
                                    np.zeros((side * side, ntab)))
        self._bias_index = _relative_index(spec.window, r)

    def __call__(self, x: Tensor, grid) -> Tensor:
        spec = self.spec
        sy, sx = grid
        b, t, n, c = x.shape
        m, r, nh = spec.window, spec.reduction, spec.num_heads
        if n != sy * sx:
            raise ShapeError(f"token count {n} does not match grid {grid}")
        if sy % m or sx % m:
            raise ShapeError(f"grid {grid} is not a multiple of window {m}")
        py, px = sy // m, sx // m
        nw = py * px
        ch = c // nh
        l = m // r
        kk = l * l
        cr = c // (r * r)

        xw = window_partition(x, grid, m)  # [B, T, nw, M^2, C]

        q = tensor.matmul(xw, self.q)
        q = q.reshape(b, t, nw, m * m, nh, ch).permute(0, 1, 2, 4, 3, 5)

        kv = tensor.matmul(xw, self.kv)  # [B, T, nw, M^2, 2 * cr]
        k = token_unshuffle(tensor.narrow(kv, -1, 0, cr), m, r)
        v = token_unshuffle(tensor.narrow(kv, -1, cr, cr), m, r)
        k = k.reshape(b, t, nw, kk, nh, ch).permute(0, 1, 2, 4, 3, 5)
        v = v.reshape(b, t, nw, kk, nh, ch).permute(0, 1, 2, 4, 3, 5)

        scores = tensor.matmul(q, k.permute(0, 1, 2, 3, 5, 4))
        scores = tensor.scale(scores, ch ** -0.5)

        bias = tensor.take(self.bias_table, self._bias_index.reshape(-1))
        bias = bias.reshape(m * m, kk, bias.shape[-1]).permute(2, 0, 1)
        bias = bias.reshape(1, 1, 1, bias.shape[0], m * m, kk)
        scores = tensor.add(scores, tensor.expand(bias, scores.shape))

        attn = tensor.softmax(scores, axis=-1)
        ctx = tensor.matmul(attn, v)  # [B, T, nw, nh, M^2, ch]
        ctx = ctx.permute(0, 1, 2, 4, 3, 5).reshape(b, t, nw, m * m, c)
        out = tensor.matmul(ctx, self.out)
        return window_merge(out, grid, m)


def _relative_index(m: int, r: int) -> np.ndarray:
    """[M^2, M^2/r^2] flat indices into the relative position bias table.

    The displacement between query token (qy, qx) and reduced key cell
    (ky, kx) is measured on the reduced grid: (qy // r - ky, qx // r - kx),
    each component in [-(M/r - 1), M/r - 1].
    """
    l = m // r
    side = 2 * l - 1
    idx = np.empty((m * m, l * l), dtype=np.int64)
    for qy in range(m):
        for qx in range(m):
            qi = qy * m + qx
            for ky in range(l):
                for kx in range(l):
                    dy = qy // r - ky + l - 1
                    dx = qx // r - kx + l - 1
                    idx[qi, ky * l + kx] = dy * side + dx
    return idx


class ChannelAttention:
    """Grouped attention across channels, per frame.

    A depthwise 3x3 convolution (a convolutional position encoding) is
    added to the branch input first.  Channels are then split into
    ``num_groups`` independent groups; inside a group, attention scores of
    shape [Cg, Cg] are formed by contracting queries and keys over the
    spatial axis, so the mixing is channel-to-channel and no information
    crosses frames.
    """

    def __init__(self, store: ParameterStore, prefix: str, spec: AttentionSpec,
                 rng: np.random.Generator):
        c = spec.embed_dim
        ng = spec.num_groups
        cg = c // ng
        self.spec = spec
        self.cpe_weight = store.add(f"{prefix}.cpe.weight",
                                    trunc_normal(rng, (c, 1, 3, 3)))
        self.cpe_bias = store.add(f"{prefix}.cpe.bias", np.zeros((c,)))
        self.q = store.add(f"{prefix}.q", trunc_normal(rng, (ng, cg, cg)))
        self.k = store.add(f"{prefix}.k", trunc_normal(rng, (ng, cg, cg)))
        self.v = store.add(f"{prefix}.v", trunc_normal(rng, (ng, cg, cg)))
        self.out = store.add(f"{prefix}.out", np.zeros((ng, cg, cg)))

    def __call__(self, x: Tensor, grid) -> Tensor:
        spec = self.spec
        sy, sx = grid
        b, t, n, c = x.shape
        ng = spec.num_groups
        cg = c // ng

        img = (x.reshape(b, t, sy, sx, c)
                .permute(0, 1, 4, 2, 3)
                .reshape(b * t, c, sy, sx))
        pe = conv.conv2d(img, self.cpe_weight, self.cpe_bias,
                         stride=1, padding=1, groups=c)
        h = (tensor.add(img, pe)
             .reshape(b, t, c, sy, sx)
             .permute(0, 1, 3, 4, 2)
             .reshape(b, t, n, c))

        grp = h.reshape(b, t, n, ng, cg).permute(0, 1, 3, 2, 4)  # [B,T,ng,N,cg]
        q = tensor.matmul(grp, self.q)
        k = tensor.matmul(grp, self.k)
        v = tensor.matmul(grp, self.v)

        scores = tensor.matmul(q.permute(0, 1, 2, 4, 3), k)  # [B,T,ng,cg,cg]
        scores = tensor.scale(scores, cg ** -0.5)
        attn = tensor.softmax(scores, axis=-1)
        ctx = tensor.matmul(v, attn.permute(0, 1, 2, 4, 3))  # [B,T,ng,N,cg]
        out = tensor.matmul(ctx, self.out)
        return out.permute(0, 1, 3, 2, 4).reshape(b, t, n, c)
