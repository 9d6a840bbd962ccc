"""Reverse-mode automatic differentiation over numpy arrays.

The engine is deliberately small: a Tensor wraps an ndarray, every operation
computes its result eagerly with numpy and records a closure that maps the
result's gradient to contributions for the inputs.  ``backward()`` replays
those closures once in reverse topological order.

Design constraints, chosen to keep gradients auditable:

* Gradients accumulate.  A tensor consumed by several operations receives the
  sum of all contributions, so closures add into ``grad`` and never assign
  over it.  Callers are responsible for clearing gradients between steps.
* No implicit broadcasting.  Elementwise operations require identical shapes
  and dtypes; the only shape-changing conveniences are ``expand`` (explicit)
  and the batch dimensions of ``matmul``.  Mismatches raise ``ShapeError``
  with both shapes in the message.
* Two dtypes only.  float32 is the working precision; float64 exists so the
  same graphs can be checked at tighter tolerance.  Mixing them in one
  operation raises ``TypeError`` instead of upcasting silently.

Intermediate gradients are freed as soon as their node has been processed,
which keeps backward memory proportional to the forward activations.  Set
``keep_grad`` on a tensor to inspect its gradient after ``backward()``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "permute",
    "reshape",
    "expand",
    "concat",
    "narrow",
    "take",
    "softmax",
    "masked_fill",
    "layer_norm",
    "gelu",
    "sigmoid",
]

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse mode.

    ``data`` is the value, ``grad`` the accumulated gradient (or None), and
    ``_parents`` / ``_backward`` the recorded graph edge.  Tensors compare by
    identity; the graph is a DAG of object references.
    """

    __slots__ = ("data", "grad", "requires_grad", "keep_grad", "name",
                 "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in _ALLOWED_DTYPES:
            raise TypeError(
                f"tensor data must be float32 or float64, got {arr.dtype}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.keep_grad = False
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.name:
            flags.append(f"name={self.name!r}")
        tail = (", " + ", ".join(flags)) if flags else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tail})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has shape {self.data.shape}, not a scalar")
        return float(self.data)

    def detach(self) -> "Tensor":
        """A view of the same data with no graph history."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Without an argument the tensor must be a scalar and is seeded with 1.
        Gradients of interior nodes are freed as soon as they have been
        consumed unless ``keep_grad`` is set on that node.
        """
        if not self.requires_grad:
            raise RuntimeError("backward called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(
                    f"backward without a seed gradient needs a scalar, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"backward: seed gradient shape {grad.shape} does not match tensor shape {self.data.shape}")

        order = _toposort(self)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents and not node.keep_grad:
                node.grad = None  # interior gradients are transient

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape manipulation ----------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def expand(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return expand(self, shape)

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        axes = _normalize_axes(axis, self.data.ndim)
        data = np.asarray(self.data.sum(axis=axes, keepdims=keepdims))

        def backward(g):
            gg = g
            if axes is not None and not keepdims:
                gg = np.expand_dims(g, axes)
            _accum(self, np.broadcast_to(gg, self.data.shape))

        return _from_op(data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        axes = _normalize_axes(axis, self.data.ndim)
        data = np.asarray(self.data.mean(axis=axes, keepdims=keepdims))
        count = self.data.size // max(data.size, 1)
        inv = 1.0 / count

        def backward(g):
            gg = g
            if axes is not None and not keepdims:
                gg = np.expand_dims(g, axes)
            _accum(self, np.broadcast_to(gg, self.data.shape) * inv, fresh=True)

        return _from_op(data, (self,), backward)


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _toposort(root: Tensor):
    """Post-order over the recorded graph, parents before consumers."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray, fresh: bool = False):
    """Add a gradient contribution to ``t``.

    ``fresh=True`` promises that ``g`` is newly allocated and handed to
    exactly one parent, so the first accumulation may take ownership of the
    buffer instead of copying.  Views of another tensor's gradient must be
    passed with ``fresh=False``: stealing a shared buffer would alias two
    gradients and a later ``+=`` on one would corrupt the other.
    """
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if fresh else np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _from_op(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled:
        grad_parents = tuple(p for p in parents if p.requires_grad)
        if grad_parents:
            out.requires_grad = True
            out._parents = grad_parents
            out._backward = backward
    return out


def _check_elementwise(a: Tensor, b, op: str):
    if not isinstance(b, Tensor):
        raise TypeError(f"{op}: expected a Tensor operand, got {type(b).__name__}")
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} must match exactly")
    if a.data.dtype != b.data.dtype:
        raise TypeError(
            f"{op}: operand dtypes {a.data.dtype} and {b.data.dtype} must match")


# -- arithmetic -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b.  Shapes and dtypes must match exactly."""
    _check_elementwise(a, b, "add")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _from_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b.  Shapes and dtypes must match exactly."""
    _check_elementwise(a, b, "sub")

    def backward(g):
        _accum(a, g)
        _accum(b, -g, fresh=True)

    return _from_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product.  Shapes and dtypes must match."""
    _check_elementwise(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            _accum(a, g * b.data, fresh=True)
        if b.requires_grad:
            _accum(b, g * a.data, fresh=True)

    return _from_op(a.data * b.data, (a, b), backward)


def scale(a: Tensor, s) -> Tensor:
    """Multiply by a python scalar; the dtype is preserved."""
    s = float(s)

    def backward(g):
        _accum(a, g * s, fresh=True)

    return _from_op(a.data * s, (a,), backward)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product.

    Both operands must be at least 2-d; the engine has no 1-d promotion
    rules.  Leading (batch) dimensions broadcast numpy-style, and the
    backward pass sums gradient over any broadcast batch axes.
    """
    if not isinstance(b, Tensor):
        raise TypeError(f"matmul: expected a Tensor operand, got {type(b).__name__}")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul: operands must be at least 2-d, got {a.shape} @ {b.shape}")
    if a.dtype != b.dtype:
        raise TypeError(f"matmul: operand dtypes {a.dtype} and {b.dtype} must match")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # n-d activations times a 2-d weight: one flat GEMM beats numpy's
        # per-batch loop by a wide margin and is mathematically identical.
        lead = a.shape[:-1]
        k, n = b.shape
        a2 = np.ascontiguousarray(a.data).reshape(-1, k)
        data = (a2 @ b.data).reshape(*lead, n)

        def backward(g):
            g2 = np.ascontiguousarray(g).reshape(-1, n)
            if a.requires_grad:
                _accum(a, (g2 @ b.data.T).reshape(a.data.shape), fresh=True)
            if b.requires_grad:
                _accum(b, a2.T @ g2, fresh=True)

        return _from_op(data, (a, b), backward)

    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(
            f"matmul: batch dimensions do not broadcast, {a.shape} @ {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _unbroadcast(ga, a.data.shape), fresh=True)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accum(b, _unbroadcast(gb, b.data.shape), fresh=True)

    return _from_op(data, (a, b), backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient over batch axes that numpy broadcast in the forward."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- shape ops ---------------------------------------------------------------

def permute(a: Tensor, axes) -> Tensor:
    """Reorder dimensions; ``axes`` must be a permutation of range(ndim)."""
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(
            f"permute: axes {axes} is not a permutation for shape {a.shape}")
    inverse = tuple(int(i) for i in np.argsort(axes))

    def backward(g):
        _accum(a, np.transpose(g, inverse))

    return _from_op(np.transpose(a.data, axes), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from None

    def backward(g):
        _accum(a, np.ascontiguousarray(g).reshape(a.data.shape))

    return _from_op(data, (a,), backward)


def expand(a: Tensor, shape) -> Tensor:
    """Explicit broadcast: size-1 axes may grow and new leading axes may be
    prepended.  The backward pass sums over every expanded axis."""
    shape = tuple(int(s) for s in shape)
    lead = len(shape) - a.ndim
    if lead < 0:
        raise ShapeError(f"expand: cannot drop dimensions, {a.shape} to {shape}")
    for sa, ss in zip(a.shape, shape[lead:]):
        if sa != ss and sa != 1:
            raise ShapeError(f"expand: shape {a.shape} is incompatible with {shape}")
    summed = tuple(i for i, (sa, ss) in enumerate(zip(a.shape, shape[lead:]))
                   if sa == 1 and ss != 1)

    def backward(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if summed:
            g = g.sum(axis=summed, keepdims=True)
        _accum(a, g, fresh=bool(lead or summed))

    return _from_op(np.broadcast_to(a.data, shape), (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    ndim = ts[0].ndim
    axis = axis % ndim
    for t in ts[1:]:
        if t.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch, {ts[0].shape} vs {t.shape}")
        if t.dtype != ts[0].dtype:
            raise TypeError(
                f"concat: operand dtypes {ts[0].dtype} and {t.dtype} must match")
        for d in range(ndim):
            if d != axis and t.shape[d] != ts[0].shape[d]:
                raise ShapeError(
                    f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    data = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * ndim
            idx[axis] = slice(int(lo), int(hi))
            _accum(t, g[tuple(idx)])

    return _from_op(data, tuple(ts), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` elements starting at ``start`` along ``axis``."""
    axis = axis % a.ndim
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}:{start + length}) is out of range for axis {axis} of shape {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros(a.data.shape, dtype=g.dtype)
        full[idx] = g
        _accum(a, full, fresh=True)

    return _from_op(a.data[idx], (a,), backward)


def take(table: Tensor, index) -> Tensor:
    """Gather rows of ``table`` along axis 0 by an integer index array.

    Repeated indices are legal; their gradients sum into the shared row.
    """
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise TypeError(f"take: index must be integer, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"take: index range [{idx.min()}, {idx.max()}] outside table of {table.shape[0]} rows")

    def backward(g):
        full = np.zeros(table.data.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        _accum(table, full, fresh=True)

    return _from_op(table.data[idx], (table,), backward)


# -- nonlinear ops ------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Masked positions may hold -inf.  A slice that is entirely -inf yields
    zeros rather than NaN, so fully masked rows are inert.
    """
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    s = np.where(s == 0.0, 1.0, s)
    out = e / s

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, out * (g - dot), fresh=True)

    return _from_op(out, (a,), backward)


def masked_fill(a: Tensor, mask, value) -> Tensor:
    """Replace positions where ``mask`` is True with a python float
    (``-inf`` is allowed).  ``mask`` is a boolean ndarray broadcastable to
    ``a.shape``; it is data, not a differentiable input."""
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise TypeError(f"masked_fill: mask must be boolean, got {mask.dtype}")
    try:
        mb = np.broadcast_to(mask, a.shape)
    except ValueError:
        raise ShapeError(
            f"masked_fill: mask shape {mask.shape} does not broadcast to {a.shape}") from None
    value = float(value)
    data = np.where(mb, value, a.data)

    def backward(g):
        _accum(a, g * ~mb, fresh=True)

    return _from_op(data, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (biased), then
    apply the affine map y = xhat * gain + shift.

    ``gain`` and ``shift`` are 1-d with length ``x.shape[-1]``."""
    c = x.shape[-1]
    if gain.shape != (c,) or shift.shape != (c,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} and shift {shift.shape} must both be ({c},)")
    if not (x.dtype == gain.dtype == shift.dtype):
        raise TypeError(
            f"layer_norm: dtypes {x.dtype}, {gain.dtype}, {shift.dtype} must match")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + shift.data

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, c).sum(axis=0), fresh=True)
        if shift.requires_grad:
            _accum(shift, np.ascontiguousarray(g).reshape(-1, c).sum(axis=0), fresh=True)
        if x.requires_grad:
            dxh = g * gain.data
            m1 = dxh.mean(axis=-1, keepdims=True)
            m2 = (dxh * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxh - m1 - xhat * m2), fresh=True)

    return _from_op(data, (x, gain, shift), backward)


_GELU_K = 0.7978845608028654  # sqrt(2 / pi)
_GELU_C = 0.044715


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation.

    The cubic is built from plain multiplies; ``x ** 3`` routes through the
    scalar pow of the C library and is two orders of magnitude slower here.
    """
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_K * (xd + _GELU_C * (x2 * xd)))
    data = 0.5 * xd * (1.0 + t)

    def backward(g):
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * (xd * xd))
        dy = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du
        _accum(x, g * dy, fresh=True)

    return _from_op(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, computed without overflow on either tail."""
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    e = np.exp(xd[~pos])
    out[~pos] = e / (1.0 + e)

    def backward(g):
        _accum(x, g * (out * (1.0 - out)), fresh=True)

    return _from_op(out, (x,), backward)
