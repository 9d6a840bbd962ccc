"""The frame prediction model.

Pipeline: patchify each frame into a token grid, run a stack of factorized
attention blocks over [B, T, N, C] tokens, map the frame axis to the output
horizon, then unpatchify back to pixels through a sigmoid (all data lives
in [0, 1]).

A block applies temporal, spatial and channel attention in a configurable
order.  In the sequential orders ("tsc", "cst", ...) each mechanism is a
pre-norm residual sublayer followed by its own gating feed-forward sublayer.
In the "parallel" order the three mechanisms read one shared normalized
input, their branch outputs are summed into a single residual update, and
one feed-forward sublayer follows.  Every output projection starts at zero,
so each block is the identity map at initialization.

Two prediction regimes:

* direct (``ar_mode=False``): a learnable linear map over the frame axis
  turns T input frames into T' output frames in one pass.
* autoregressive (``ar_mode=True``): the frame map is bypassed entirely
  (it would let output frame t read inputs later than t), the model is
  trained to predict every input frame shifted by one, and ``rollout``
  feeds predictions back in to extend the horizon.  Combined with the
  causal temporal mask, output t depends only on inputs 0..t, bit for bit.

Checkpoints are a self-describing binary container (see ``save_checkpoint``)
holding the spec as canonical JSON plus every named array; loading restores
training bit-exactly together with the optimizer records the trainer adds.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import conv, tensor
from .attention import (AttentionSpec, ChannelAttention, SpatialAttention,
                        TemporalAttention)
from .params import ParameterStore, trunc_normal
from .tensor import ShapeError, Tensor

_STREAM_INIT = 101
_ORDERS = ("tsc", "tcs", "stc", "sct", "cts", "cst", "parallel")
_MECH_NAMES = {"t": "temporal", "s": "spatial", "c": "channel"}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters; everything needed to rebuild a model."""

    frames_in: int
    frames_out: int
    channels: int
    height: int
    width: int
    patch: int
    embed_dim: int
    depth: int
    num_heads: int = 4
    window: int = 4
    reduction: int = 2
    num_groups: int = 8
    ffn_expansion: int = 4
    order: str = "tsc"
    causal: bool = True
    bias_shared: bool = False
    drop_path: float = 0.1
    ar_mode: bool = False
    ablate: str = ""

    def __post_init__(self):
        if self.order not in _ORDERS:
            raise ValueError(f"order must be one of {_ORDERS}, got {self.order!r}")
        if len(set(self.ablate)) != len(self.ablate) or set(self.ablate) - set("tsc"):
            raise ValueError(f"ablate must be a subset of 'tsc', got {self.ablate!r}")
        if self.ar_mode and not self.causal:
            raise ValueError("ar_mode requires causal temporal attention")
        for field in ("frames_in", "frames_out", "channels", "height", "width",
                      "patch", "embed_dim", "depth"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if not 0.0 <= self.drop_path < 1.0:
            raise ValueError(f"drop_path must be in [0, 1), got {self.drop_path}")
        self.attention_spec()  # validates the divisibility constraints

    def attention_spec(self) -> AttentionSpec:
        return AttentionSpec(embed_dim=self.embed_dim, num_heads=self.num_heads,
                             window=self.window, reduction=self.reduction,
                             num_groups=self.num_groups, causal=self.causal,
                             bias_shared=self.bias_shared)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(**d)


class Norm:
    """Layer norm with learnable gain and shift."""

    def __init__(self, store: ParameterStore, prefix: str, c: int):
        self.gain = store.add(f"{prefix}.gain", np.ones(c))
        self.shift = store.add(f"{prefix}.shift", np.zeros(c))

    def __call__(self, x: Tensor) -> Tensor:
        return tensor.layer_norm(x, self.gain, self.shift)


class GatingFFN:
    """Gated feed-forward: W_out(gelu(W_a x) * (W_b x)), bias-free.

    W_a and W_b are stored fused as one [C, 2 * expansion * C] matrix so the
    input is projected once.  W_out starts at zero.
    """

    def __init__(self, store: ParameterStore, prefix: str, c: int,
                 expansion: int, rng: np.random.Generator):
        self.hidden = expansion * c
        self.gate = store.add(f"{prefix}.gate",
                              trunc_normal(rng, (c, 2 * self.hidden)))
        self.out = store.add(f"{prefix}.out", np.zeros((self.hidden, c)))

    def __call__(self, x: Tensor) -> Tensor:
        gw = tensor.matmul(x, self.gate)
        a = tensor.narrow(gw, -1, 0, self.hidden)
        b = tensor.narrow(gw, -1, self.hidden, self.hidden)
        return tensor.matmul(tensor.mul(tensor.gelu(a), b), self.out)


def _drop_path(x: Tensor, prob: float, rng, train: bool) -> Tensor:
    """Stochastic depth: zero a residual branch per sample with probability
    ``prob`` during training, scaling survivors by 1 / (1 - prob)."""
    if not train or prob <= 0.0:
        return x
    if rng is None:
        raise ValueError("training with drop_path > 0 requires an rng")
    keep = 1.0 - prob
    mask = (rng.random(x.shape[0]) < keep).astype(x.data.dtype) / keep
    shape = (x.shape[0],) + (1,) * (x.ndim - 1)
    full = np.broadcast_to(mask.reshape(shape), x.shape)
    return tensor.mul(x, Tensor(full))


_ATTENTION_TYPES = {"t": TemporalAttention, "s": SpatialAttention,
                    "c": ChannelAttention}


class Block:
    """One stack layer: attention sublayers plus gating feed-forward."""

    def __init__(self, store: ParameterStore, prefix: str, mspec: ModelSpec,
                 aspec: AttentionSpec, rng: np.random.Generator,
                 drop_prob: float):
        c = mspec.embed_dim
        self.order = mspec.order
        self.drop_prob = drop_prob
        active = [ch for ch in ("tsc" if self.order == "parallel" else self.order)
                  if ch not in mspec.ablate]
        if self.order == "parallel":
            self.norm1 = Norm(store, f"{prefix}.norm1", c)
            self.attns = [
                _ATTENTION_TYPES[ch](store, f"{prefix}.{_MECH_NAMES[ch]}", aspec, rng)
                for ch in active]
            self.norm2 = Norm(store, f"{prefix}.norm2", c)
            self.ffn = GatingFFN(store, f"{prefix}.ffn", c, mspec.ffn_expansion, rng)
        else:
            self.units = []
            for ch in active:
                name = _MECH_NAMES[ch]
                unit = (
                    Norm(store, f"{prefix}.{name}.norm1", c),
                    _ATTENTION_TYPES[ch](store, f"{prefix}.{name}", aspec, rng),
                    Norm(store, f"{prefix}.{name}.norm2", c),
                    GatingFFN(store, f"{prefix}.{name}.ffn", c,
                              mspec.ffn_expansion, rng),
                )
                self.units.append(unit)

    def __call__(self, x: Tensor, grid, train: bool, rng) -> Tensor:
        p = self.drop_prob
        if self.order == "parallel":
            if self.attns:
                h = self.norm1(x)
                branch = self.attns[0](h, grid)
                for attn in self.attns[1:]:
                    branch = tensor.add(branch, attn(h, grid))
                x = tensor.add(x, _drop_path(branch, p, rng, train))
            x = tensor.add(x, _drop_path(self.ffn(self.norm2(x)), p, rng, train))
            return x
        for norm1, attn, norm2, ffn in self.units:
            x = tensor.add(x, _drop_path(attn(norm1(x), grid), p, rng, train))
            x = tensor.add(x, _drop_path(ffn(norm2(x)), p, rng, train))
        return x


class Model:
    """Patchify, attention stack, frame map, unpatchify."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.store = ParameterStore(dtype)
        rng = np.random.default_rng((seed, _STREAM_INIT))
        aspec = spec.attention_spec()

        unit = spec.patch * spec.window
        hp = -(-spec.height // unit) * unit
        wp = -(-spec.width // unit) * unit
        top, left = (hp - spec.height) // 2, (wp - spec.width) // 2
        self._pads = (top, hp - spec.height - top, left, wp - spec.width - left)
        self.grid = (hp // spec.patch, wp // spec.patch)

        c, ce, p = spec.channels, spec.embed_dim, spec.patch
        self.patch_w = self.store.add("patch.weight", trunc_normal(rng, (ce, c, p, p)))
        self.patch_b = self.store.add("patch.bias", np.zeros(ce))
        self.blocks = []
        for d in range(spec.depth):
            prob = spec.drop_path * d / (spec.depth - 1) if spec.depth > 1 else 0.0
            self.blocks.append(Block(self.store, f"blocks.{d}", spec, aspec, rng, prob))
        self.final = Norm(self.store, "final", ce)
        if not spec.ar_mode:
            t_in, t_out = spec.frames_in, spec.frames_out
            init = (np.eye(t_out, dtype=np.float64) if t_in == t_out
                    else np.full((t_out, t_in), 1.0 / t_in))
            self.merge_w = self.store.add("merge.weight", init)
        self.unpatch_w = self.store.add("unpatch.weight", trunc_normal(rng, (ce, c, p, p)))
        self.unpatch_b = self.store.add("unpatch.bias", np.zeros(c))

    # -- forward ------------------------------------------------------------

    def forward(self, frames: Tensor, train: bool = False, rng=None) -> Tensor:
        """[B, T, C, H, W] in, [B, T_out, C, H, W] in [0, 1] out.

        T_out is ``frames_out`` in direct mode and ``frames_in`` in
        autoregressive mode (each position predicts its successor).
        """
        spec = self.spec
        if frames.ndim != 5:
            raise ShapeError(f"forward: expected [B, T, C, H, W], got {frames.shape}")
        b, t, c, h, w = frames.shape
        if (t, c, h, w) != (spec.frames_in, spec.channels, spec.height, spec.width):
            raise ShapeError(
                f"forward: input {frames.shape} does not match spec "
                f"(T={spec.frames_in}, C={spec.channels}, H={spec.height}, W={spec.width})")
        sy, sx = self.grid
        n = sy * sx

        x = frames.reshape(b * t, c, h, w)
        x = conv.pad2d(x, self._pads)
        x = conv.conv2d(x, self.patch_w, self.patch_b, stride=spec.patch)
        x = (x.reshape(b, t, spec.embed_dim, sy, sx)
              .permute(0, 1, 3, 4, 2)
              .reshape(b, t, n, spec.embed_dim))

        for block in self.blocks:
            x = block(x, self.grid, train, rng)
        x = self.final(x)

        if not spec.ar_mode:
            # learned linear map over the frame axis: T -> frames_out
            x = x.permute(0, 2, 3, 1)  # [B, N, C, T]
            x = tensor.matmul(x, tensor.permute(self.merge_w, (1, 0)))
            x = x.permute(0, 3, 1, 2)
        t_out = x.shape[1]

        x = (x.reshape(b * t_out, n, spec.embed_dim)
              .reshape(b * t_out, sy, sx, spec.embed_dim)
              .permute(0, 3, 1, 2))
        x = conv.conv_transpose2d(x, self.unpatch_w, self.unpatch_b, stride=spec.patch)
        top, _, left, _ = self._pads
        if x.shape[2] != h:
            x = tensor.narrow(x, 2, top, h)
        if x.shape[3] != w:
            x = tensor.narrow(x, 3, left, w)
        x = tensor.sigmoid(x)
        return x.reshape(b, t_out, c, h, w)

    def __call__(self, frames: Tensor, train: bool = False, rng=None) -> Tensor:
        return self.forward(frames, train=train, rng=rng)

    def rollout(self, frames: np.ndarray, steps: int | None = None) -> np.ndarray:
        """Autoregressive prediction: feed the last prediction back in and
        slide the window, ``steps`` times.  Returns [B, steps, C, H, W]."""
        if not self.spec.ar_mode:
            raise ValueError("rollout requires a model built with ar_mode=True")
        steps = self.spec.frames_out if steps is None else int(steps)
        window = np.asarray(frames, dtype=self.store.dtype).copy()
        preds = []
        with tensor.no_grad():
            for _ in range(steps):
                out = self.forward(Tensor(window)).data
                nxt = out[:, -1:]
                preds.append(nxt)
                window = np.concatenate([window[:, 1:], nxt], axis=1)
        return np.concatenate(preds, axis=1)

    def predict(self, frames: np.ndarray, steps: int | None = None) -> np.ndarray:
        """Inference entry point; dispatches on the prediction regime."""
        frames = np.asarray(frames, dtype=self.store.dtype)
        if self.spec.ar_mode:
            return self.rollout(frames, steps)
        if steps is not None and steps != self.spec.frames_out:
            raise ValueError(
                f"direct mode predicts exactly frames_out={self.spec.frames_out} frames")
        with tensor.no_grad():
            return self.forward(Tensor(frames)).data

    def num_parameters(self) -> int:
        return self.store.num_parameters()


# -- checkpoint container -----------------------------------------------------

_CKPT_MAGIC = b"FCCKPT01"
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, spec: ModelSpec, arrays: dict[str, np.ndarray],
                    extra: dict | None = None):
    """Write the self-describing checkpoint container.

    Layout: magic "FCCKPT01", u32 header length, canonical JSON header
    {"spec": ..., "extra": ...}, u32 record count, then per record a u16
    name length, the utf-8 name, a u8 dtype tag (0 float32, 1 float64), a
    u8 rank, u32 extents, and the raw little-endian C-order payload.
    """
    header = _canonical_json({"spec": spec.to_dict(), "extra": extra or {}})
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _TAG_FOR:
                raise TypeError(f"checkpoint array {name}: unsupported dtype {arr.dtype}")
            enc = name.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(struct.pack("<BB", _TAG_FOR[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                                     copy=False).tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (spec, arrays, extra)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _CKPT_MAGIC:
        raise ValueError(f"not a checkpoint file (bad magic {blob[:8]!r})")
    off = 8
    (hlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        dt = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if rank else dt.itemsize
        arr = np.frombuffer(blob[off:off + nbytes], dtype=dt).reshape(shape)
        off += nbytes
        arrays[name] = arr.astype(dt.newbyteorder("="), copy=True)
    spec = ModelSpec.from_dict(header["spec"])
    return spec, arrays, header.get("extra", {})


def model_from_checkpoint(path, dtype=np.float32) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; optimizer records are ignored.

    Returns (model, extra)."""
    spec, arrays, extra = load_checkpoint(path)
    model = Model(spec, seed=0, dtype=dtype)
    weights = {k: v for k, v in arrays.items() if not k.startswith("opt.")}
    model.store.load_state_dict(weights)
    return model, extra
