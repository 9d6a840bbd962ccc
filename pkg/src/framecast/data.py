"""Bouncing-sprite video generation and dataset file handling.

The generator is a desk-scale stand-in for moving-digit benchmarks: a few
bright shapes drift across a black frame and bounce elastically off the
walls.  Every random draw comes from the splitmix64 stream documented on
``SplitMix64``, in an order fixed by ``generate_sequence``, so a dataset is
a pure function of its spec and any implementation of this format can
reproduce the files bit for bit.

The container format (``Dataset.save``) and the array-container reader
(``read_npy``) are specified exactly in their docstrings; all integers are
little-endian.
"""

from __future__ import annotations

import ast
import math
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_MAGIC = b"FCSPRT01"
_HEADER_LEN = 33  # magic + six u32 fields + dtype tag

_STREAM_SHUFFLE = 211

SPRITE_KINDS = ("square", "cross", "disc")


class DataFormatError(ValueError):
    """Malformed dataset or array-container file."""


class SplitMix64:
    """Minimal deterministic RNG (the splitmix64 finalizer).

    Small enough to restate in full, which is the point: any other
    implementation of the dataset format can reproduce the stream exactly.

        state = (state + 0x9E3779B97F4A7C15) mod 2^64
        z = state
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB   mod 2^64
        output = z ^ (z >> 31)

    ``uniform`` maps the top 53 output bits onto [0, 1); ``choice`` reduces
    the output modulo n (the bias is irrelevant at these ranges but the rule
    is part of the format).
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0 ** -53)

    def choice(self, n: int) -> int:
        return self.next_u64() % n


@dataclass(frozen=True)
class SpriteSceneSpec:
    """Parameters of one synthetic sequence family.

    Speeds are in pixels per frame.  The speed range default is our own
    choice; source benchmarks describe a "predefined range" without giving
    one.  Frames are square (size x size), single-channel.
    """

    size: int = 32
    frames: int = 20
    num_sprites: int = 2
    sprite_size: int = 8
    v_min: float = 1.0
    v_max: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if min(self.size, self.frames, self.num_sprites, self.sprite_size) < 1:
            raise ValueError("size, frames, num_sprites and sprite_size must be positive")
        if self.sprite_size > self.size:
            raise ValueError(f"sprite size {self.sprite_size} exceeds frame size {self.size}")
        if self.v_min < 0 or self.v_max < self.v_min:
            raise ValueError(f"bad speed range [{self.v_min}, {self.v_max}]")


def sprite_mask(kind: str, size: int) -> np.ndarray:
    """Boolean stencil of one sprite inside its size * size bounding box."""
    s = size
    if kind == "square":
        return np.ones((s, s), dtype=bool)
    if kind == "cross":
        # two centred bars, each about a third of the box thick
        th = max(1, s // 3)
        off = (s - th) // 2
        m = np.zeros((s, s), dtype=bool)
        m[off:off + th, :] = True
        m[:, off:off + th] = True
        return m
    if kind == "disc":
        c = (s - 1) / 2.0
        yy, xx = np.mgrid[0:s, 0:s]
        return (yy - c) ** 2 + (xx - c) ** 2 <= (s / 2.0) ** 2
    raise ValueError(f"unknown sprite kind {kind!r}")


def _reflect(pos: float, vel: float, hi: float):
    """Elastic bounce on [0, hi]: mirror the overshoot about the wall and
    flip the velocity, repeating while still out of range."""
    if hi == 0.0:
        return 0.0, -vel
    while pos < 0.0 or pos > hi:
        if pos < 0.0:
            pos, vel = -pos, -vel
        else:
            pos, vel = 2.0 * hi - pos, -vel
    return pos, vel


def generate_sequence(spec: SpriteSceneSpec, index: int = 0) -> np.ndarray:
    """One [frames, 1, size, size] uint8 sequence.

    Sequence ``index`` draws from a splitmix64 stream seeded with
    ``spec.seed + index`` (mod 2^64).  Per sprite the draw order is fixed:
    kind (choice of 3), intensity U(0.5, 1), x U(0, size - sprite),
    y U(0, size - sprite), direction U(0, 2 pi), speed U(v_min, v_max).
    Each frame is rendered before the sprites advance, positions rounded to
    the nearest pixel, overlaps composited by maximum intensity, and pixels
    quantized as floor(255 * value + 0.5).
    """
    rng = SplitMix64((spec.seed + index) & _MASK64)
    s = spec.sprite_size
    hi = float(spec.size - s)
    sprites = []
    for _ in range(spec.num_sprites):
        kind = SPRITE_KINDS[rng.choice(len(SPRITE_KINDS))]
        intensity = rng.uniform(0.5, 1.0)
        x = rng.uniform(0.0, hi)
        y = rng.uniform(0.0, hi)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        speed = rng.uniform(spec.v_min, spec.v_max)
        sprites.append([sprite_mask(kind, s) * intensity, x, y,
                        speed * math.cos(angle), speed * math.sin(angle)])

    out = np.empty((spec.frames, 1, spec.size, spec.size), dtype=np.uint8)
    canvas = np.zeros((spec.size, spec.size), dtype=np.float64)
    for t in range(spec.frames):
        canvas[:] = 0.0
        for sp in sprites:
            px = int(math.floor(sp[1] + 0.5))
            py = int(math.floor(sp[2] + 0.5))
            cell = canvas[py:py + s, px:px + s]
            np.maximum(cell, sp[0], out=cell)
        out[t, 0] = np.floor(canvas * 255.0 + 0.5).astype(np.uint8)
        for sp in sprites:
            sp[1], sp[3] = _reflect(sp[1] + sp[3], sp[3], hi)
            sp[2], sp[4] = _reflect(sp[2] + sp[4], sp[4], hi)
    return out


def generate_dataset(spec: SpriteSceneSpec, n_train: int, n_test: int) -> "Dataset":
    """Train sequences use indices [0, n_train); test the next n_test.

    The index split makes the two sets disjoint by construction, and lets
    the sequences be generated independently (each index seeds its own
    stream).
    """
    if n_train < 0 or n_test < 0:
        raise ValueError("sequence counts must be non-negative")
    shape = (0, spec.frames, 1, spec.size, spec.size)
    train = (np.stack([generate_sequence(spec, i) for i in range(n_train)])
             if n_train else np.empty(shape, dtype=np.uint8))
    test = (np.stack([generate_sequence(spec, n_train + i) for i in range(n_test)])
            if n_test else np.empty(shape, dtype=np.uint8))
    return Dataset(train, test)


@dataclass
class Dataset:
    """Uint8 video sequences split into train and test.

    Both splits are [n, T, C, H, W] arrays of raw bytes; pixel values map to
    [0, 1] by dividing by 255 (``load_batch`` does this).
    """

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "test"):
            arr = getattr(self, name)
            if arr.ndim != 5 or arr.dtype != np.uint8:
                raise ValueError(f"{name} split must be uint8 [n, T, C, H, W]")
        if self.train.shape[1:] != self.test.shape[1:]:
            raise ValueError(f"train {self.train.shape[1:]} and test "
                             f"{self.test.shape[1:]} sequence shapes differ")

    @property
    def frames(self) -> int:
        return self.train.shape[1]

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def save(self, path):
        """Binary layout: magic ``FCSPRT01``; u32 n_train, n_test, frames,
        channels, height, width; u8 element tag (0 = unsigned byte); then the
        train and test payloads, C-order.  Little-endian throughout."""
        t, c, h, w = self.train.shape[1:]
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<6I", len(self.train), len(self.test), t, c, h, w))
            f.write(bytes([0]))
            f.write(self.train.tobytes())
            f.write(self.test.tobytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as f:
            blob = f.read()
        if blob[:8] != _MAGIC:
            raise DataFormatError(f"bad magic at byte 0: {blob[:8]!r}")
        if len(blob) < _HEADER_LEN:
            raise DataFormatError(f"header ends at byte {len(blob)}, need {_HEADER_LEN}")
        n_train, n_test, t, c, h, w = struct.unpack_from("<6I", blob, 8)
        if blob[32] != 0:
            raise DataFormatError(f"unsupported element tag {blob[32]} at byte 32")
        seq = t * c * h * w
        need = _HEADER_LEN + (n_train + n_test) * seq
        if len(blob) != need:
            raise DataFormatError(f"payload ends at byte {len(blob)}, expected {need}")
        flat = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER_LEN)
        train = flat[:n_train * seq].reshape(n_train, t, c, h, w).copy()
        test = flat[n_train * seq:].reshape(n_test, t, c, h, w).copy()
        return cls(train, test)


def epoch_order(n: int, batch_size: int, seed: int, epoch: int) -> np.ndarray:
    """[n // batch_size, batch_size] sequence indices for one epoch.

    A fresh permutation per epoch, derived only from (seed, epoch) so any
    step of any epoch can be reproduced without replaying earlier ones.  The
    trailing partial batch is dropped.
    """
    if batch_size < 1 or n < batch_size:
        raise ValueError(f"cannot cut {n} sequences into batches of {batch_size}")
    perm = np.random.default_rng((seed, _STREAM_SHUFFLE, epoch)).permutation(n)
    k = n // batch_size
    return perm[:k * batch_size].reshape(k, batch_size)


def load_batch(split: np.ndarray, idx: np.ndarray, frames_in: int,
               frames_out: int, ar: bool = False):
    """(inputs, targets) float32 pair for the sequences in ``idx``.

    Inputs are the first ``frames_in`` frames scaled to [0, 1].  Direct
    targets are the ``frames_out`` frames after the input window; AR targets
    are the input window shifted one frame forward.
    """
    need = frames_in + (1 if ar else frames_out)
    if split.shape[1] < need:
        raise ValueError(f"sequences have {split.shape[1]} frames, need {need}")
    seqs = split[idx].astype(np.float32) / 255.0
    x = seqs[:, :frames_in]
    y = seqs[:, 1:frames_in + 1] if ar else seqs[:, frames_in:frames_in + frames_out]
    return x, y


def batches(split: np.ndarray, batch_size: int, frames_in: int, frames_out: int,
            seed: int = 0, epoch: int = 0, ar: bool = False):
    """Yield one epoch of shuffled (inputs, targets) batches."""
    order = epoch_order(len(split), batch_size, seed, epoch)
    for idx in order:
        yield load_batch(split, idx, frames_in, frames_out, ar)


def read_npy(path) -> np.ndarray:
    """Parse a version-1.0 array container holding C-order unsigned bytes.

    Layout: ``\\x93NUMPY``, version bytes 1 and 0, u16 header length, the
    textual header dictionary, then the raw payload.  Only the subset needed
    for standard video array files is supported; anything else fails loudly
    rather than guessing.
    """
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:6] != b"\x93NUMPY":
        raise DataFormatError(f"bad magic at byte 0: {blob[:6]!r}")
    if len(blob) < 10:
        raise DataFormatError(f"file ends at byte {len(blob)} inside the fixed header")
    if blob[6:8] != b"\x01\x00":
        raise DataFormatError(f"unsupported container version {blob[6]}.{blob[7]}")
    (hlen,) = struct.unpack_from("<H", blob, 8)
    start = 10 + hlen
    if len(blob) < start:
        raise DataFormatError(f"file ends at byte {len(blob)} inside the header "
                              f"dictionary (expected {start})")
    try:
        meta = ast.literal_eval(blob[10:start].decode("latin1").strip())
    except (SyntaxError, ValueError):
        raise DataFormatError("unparseable header dictionary") from None
    if not isinstance(meta, dict):
        raise DataFormatError(f"header is not a dictionary: {meta!r}")
    descr = meta.get("descr")
    if descr not in ("|u1", "u1"):
        raise DataFormatError(f"unsupported element type {descr!r} (unsigned bytes only)")
    if meta.get("fortran_order"):
        raise DataFormatError("fortran-order payload is not supported")
    shape = meta.get("shape")
    if (not isinstance(shape, tuple)
            or not all(isinstance(d, int) and d >= 0 for d in shape)):
        raise DataFormatError(f"bad shape {shape!r}")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if len(blob) - start != count:
        raise DataFormatError(f"payload ends at byte {len(blob)}, expected {start + count}")
    return np.frombuffer(blob, dtype=np.uint8, offset=start).reshape(shape).copy()


def frames_from_npy(arr: np.ndarray) -> np.ndarray:
    """Normalize array-container video layouts to [sequences, T, C, H, W].

    Rank 3 is a single sequence (T, H, W); rank 4 is the conventional
    frame-first stack (T, S, H, W); rank 5 passes through unchanged.
    """
    if arr.ndim == 3:
        return arr[None, :, None]
    if arr.ndim == 4:
        return np.ascontiguousarray(arr.transpose(1, 0, 2, 3))[:, :, None]
    if arr.ndim == 5:
        return arr
    raise DataFormatError(f"cannot interpret a rank-{arr.ndim} array as video")
