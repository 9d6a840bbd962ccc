"""Structured self-checks for the engine and the model.

Four suites, each a list of independent named checks:

* ``gradient``: central finite differences against every differentiable
  operation, in float64 with h = 1e-5.
* ``oracle``: the factorized attention mechanisms against a dense
  reference implementation that shares no code with the fast paths.
* ``causality``: autoregressive predictions must be bit-identical when
  future input frames change.
* ``invariants``: structural identities (residual behaviour at
  initialization, shape round trips, checkpoint round trips).

Each check returns a CheckResult rather than raising, so a caller can print
the full scoreboard even when something is broken.  The CLI's ``verify``
command and the test suite consume the same results.

Ops are called through their modules (``tensor.gelu`` rather than an
imported name) so a check exercises whatever is installed at call time.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import conv, reference, tensor
from .attention import (AttentionSpec, ChannelAttention, SpatialAttention,
                        TemporalAttention, token_shuffle, token_unshuffle,
                        window_merge, window_partition)
from .model import Block, Model, ModelSpec, load_checkpoint, save_checkpoint
from .params import ParameterStore
from .tensor import Tensor


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        mark = "ok" if self.passed else "FAIL"
        return f"[{mark}] {self.suite}/{self.name}: {self.detail}"


# ---------------------------------------------------------------------------
# gradient suite
# ---------------------------------------------------------------------------

FD_STEP = 1e-5
FD_TOLERANCE = 1e-6


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _weighted(core, arrays, seed: int):
    """Wrap ``core`` into a scalar loss via a fixed random projection.

    A plain sum would hide gradient structure wherever the output has an
    invariant (softmax rows sum to one), so every case projects with
    noise instead.
    """
    with tensor.no_grad():
        out0 = core(*[tensor.Tensor(a) for a in arrays])
    w = np.random.default_rng(seed).standard_normal(out0.shape)

    def fn(*xs):
        return (core(*xs) * tensor.Tensor(w)).sum()

    return fn


def fd_check(fn, arrays, h: float = FD_STEP) -> float:
    """Max relative error between backward() and central differences.

    ``arrays`` are float64 leaves; ``fn`` maps Tensors to a scalar Tensor.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    leaves = [tensor.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    analytic = [leaf.grad.copy() for leaf in leaves]

    def value_at(arrs) -> float:
        with tensor.no_grad():
            return fn(*[tensor.Tensor(a) for a in arrs]).item()

    worst = 0.0
    for k, a in enumerate(arrays):
        numeric = np.empty_like(a)
        flat = numeric.reshape(-1)
        for j in range(a.size):
            bumped = [arr.copy() for arr in arrays]
            bumped[k].reshape(-1)[j] = a.reshape(-1)[j] + h
            hi = value_at(bumped)
            bumped[k].reshape(-1)[j] = a.reshape(-1)[j] - h
            lo = value_at(bumped)
            flat[j] = (hi - lo) / (2.0 * h)
        worst = max(worst, _rel_err(analytic[k], numeric))
    return worst


def _grad_cases():
    """One deterministic (name, fn, arrays) triple per differentiable op,
    plus composite graphs that exercise fanout and accumulation."""
    r = np.random.default_rng(20240915)
    cases = []

    def case(name, core, *arrays):
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        cases.append((name, _weighted(core, arrays, seed=len(cases) + 7), arrays))

    case("add", lambda a, b: tensor.add(a, b),
         r.standard_normal((3, 4)), r.standard_normal((3, 4)))
    case("sub", lambda a, b: tensor.sub(a, b),
         r.standard_normal((3, 4)), r.standard_normal((3, 4)))
    case("mul", lambda a, b: tensor.mul(a, b),
         r.standard_normal((3, 4)), r.standard_normal((3, 4)))
    case("scale", lambda a: tensor.scale(a, -2.5), r.standard_normal((3, 4)))
    case("neg", lambda a: tensor.neg(a), r.standard_normal((4,)))
    case("matmul_2d", lambda a, b: tensor.matmul(a, b),
         r.standard_normal((3, 4)), r.standard_normal((4, 2)))
    case("matmul_batched", lambda a, b: tensor.matmul(a, b),
         r.standard_normal((2, 1, 3, 4)), r.standard_normal((1, 5, 4, 2)))
    case("matmul_broadcast_weight", lambda a, b: tensor.matmul(a, b),
         r.standard_normal((2, 3, 4, 5)), r.standard_normal((5, 6)))
    case("permute", lambda a: tensor.permute(a, (2, 0, 1)),
         r.standard_normal((2, 3, 4)))
    case("reshape", lambda a: tensor.reshape(a, (4, 6)),
         r.standard_normal((2, 3, 4)))
    case("expand", lambda a: tensor.expand(a, (2, 3, 5, 4)),
         r.standard_normal((3, 1, 4)))
    case("concat", lambda a, b: tensor.concat([a, b], axis=1),
         r.standard_normal((2, 3)), r.standard_normal((2, 2)))
    case("narrow", lambda a: tensor.narrow(a, 1, 2, 3), r.standard_normal((4, 6)))
    idx = np.array([0, 2, 2, 4, 1])
    case("take", lambda t: tensor.take(t, idx), r.standard_normal((5, 3)))
    case("sum_all", lambda a: a.sum(), r.standard_normal((2, 3, 4)))
    case("sum_axis", lambda a: a.sum(axis=(0, 2)), r.standard_normal((2, 3, 4)))
    case("sum_keepdims", lambda a: a.sum(axis=1, keepdims=True),
         r.standard_normal((2, 3, 4)))
    case("mean_all", lambda a: a.mean(), r.standard_normal((3, 4)))
    case("mean_axis", lambda a: a.mean(axis=-1), r.standard_normal((2, 3, 4)))
    case("softmax", lambda a: tensor.softmax(a, axis=-1), r.standard_normal((3, 5)))
    mask = np.zeros((3, 5), dtype=bool)
    mask[:, 3:] = True
    case("softmax_masked",
         lambda a: tensor.softmax(tensor.masked_fill(a, mask, -np.inf), axis=-1),
         r.standard_normal((3, 5)))
    case("masked_fill", lambda a: tensor.masked_fill(a, mask, 1.5),
         r.standard_normal((3, 5)))
    case("layer_norm", lambda x, g, s: tensor.layer_norm(x, g, s),
         r.standard_normal((2, 3, 6)),
         1.0 + 0.1 * r.standard_normal((6,)), 0.1 * r.standard_normal((6,)))
    case("gelu", lambda a: tensor.gelu(a), r.standard_normal((3, 4)))
    case("sigmoid", lambda a: tensor.sigmoid(a), r.standard_normal((3, 4)))

    case("conv2d", lambda x, w, b: conv.conv2d(x, w, b, stride=1, padding=1),
         r.standard_normal((2, 3, 5, 5)), 0.3 * r.standard_normal((4, 3, 3, 3)),
         0.1 * r.standard_normal((4,)))
    case("conv2d_strided", lambda x, w: conv.conv2d(x, w, stride=2, padding=1),
         r.standard_normal((1, 2, 7, 7)), 0.3 * r.standard_normal((3, 2, 3, 3)))
    case("conv2d_depthwise",
         lambda x, w: conv.conv2d(x, w, stride=1, padding=1, groups=4),
         r.standard_normal((2, 4, 5, 5)), 0.3 * r.standard_normal((4, 1, 3, 3)))
    case("conv2d_grouped",
         lambda x, w: conv.conv2d(x, w, stride=1, padding=0, groups=2),
         r.standard_normal((1, 4, 6, 6)), 0.3 * r.standard_normal((6, 2, 3, 3)))
    case("conv_transpose2d",
         lambda x, w, b: conv.conv_transpose2d(x, w, b, stride=2, padding=1),
         r.standard_normal((2, 3, 4, 4)), 0.3 * r.standard_normal((3, 5, 3, 3)),
         0.1 * r.standard_normal((5,)))
    case("pad2d", lambda x: conv.pad2d(x, (1, 2, 0, 3)),
         r.standard_normal((2, 2, 3, 4)))

    def chain(x, g, s, w):
        h = tensor.layer_norm(x, g, s)
        h = tensor.matmul(h, w)
        h = tensor.gelu(h)
        return tensor.softmax(h, axis=-1)

    case("composite_chain", chain,
         r.standard_normal((2, 4, 6)),
         1.0 + 0.1 * r.standard_normal((6,)), 0.1 * r.standard_normal((6,)),
         0.5 * r.standard_normal((6, 6)))

    def fanout(x, w):
        a = tensor.matmul(x, w).sum()
        b = tensor.mul(x, x).sum()
        return tensor.add(a, b)

    cases.append(("composite_fanout", fanout,
                  [r.standard_normal((4, 4)), r.standard_normal((4, 3))]))
    return cases


def fd_check_inplace(forward, leaves, h: float = FD_STEP) -> float:
    """Finite differences against leaves that live inside a module.

    ``forward()`` computes a scalar Tensor from the leaves' current
    contents; each leaf is bumped in place.
    """
    forward().backward()
    analytic = [leaf.grad.copy() for leaf in leaves]
    for leaf in leaves:
        leaf.grad = None

    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        numeric = np.empty_like(flat)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            with tensor.no_grad():
                hi = forward().item()
            flat[j] = orig - h
            with tensor.no_grad():
                lo = forward().item()
            flat[j] = orig
            numeric[j] = (hi - lo) / (2.0 * h)
        worst = max(worst, _rel_err(ana, numeric.reshape(leaf.data.shape)))
    return worst


_MICRO_SPEC = dict(frames_in=2, frames_out=2, channels=1, height=8, width=8,
                   patch=2, embed_dim=8, depth=1, num_heads=2, window=4,
                   reduction=2, num_groups=4, ffn_expansion=2, drop_path=0.0)


def _model_micro_err() -> float:
    """End-to-end finite-difference error of a tiny full model, double
    precision, gradients taken for the input and every parameter."""
    model = Model(ModelSpec(**_MICRO_SPEC), seed=0, dtype=np.float64)
    rng = np.random.default_rng(77)
    # zero-initialized output projections would make the blocks invisible,
    # so perturb everything before checking
    for _, p in model.store.items():
        p.data += 0.2 * rng.standard_normal(p.data.shape)
    x = Tensor(rng.random((1, 2, 1, 8, 8)), requires_grad=True)
    w = Tensor(rng.standard_normal((1, 2, 1, 8, 8)))

    def forward():
        return (model.forward(x) * w).sum()

    leaves = [x] + [p for _, p in model.store.items()]
    # the deep composition shifts the truncation/roundoff balance; 5e-6
    # sits at the bottom of the error-vs-h curve for this graph
    return fd_check_inplace(forward, leaves, h=5e-6)


def run_gradient_checks(tolerance: float = FD_TOLERANCE, names=None):
    """Finite-difference check of every differentiable op plus the
    end-to-end micro model; one result each."""
    results = []
    for name, fn, arrays in _grad_cases():
        if names is not None and name not in names:
            continue
        err = fd_check(fn, arrays)
        results.append(CheckResult(
            suite="gradient", name=name, passed=bool(err <= tolerance),
            value=err, threshold=tolerance,
            detail=f"max rel err {err:.3e} (tol {tolerance:.0e}, h={FD_STEP:.0e})"))
    if names is None or "model_micro" in names:
        err = _model_micro_err()
        results.append(CheckResult(
            suite="gradient", name="model_micro", passed=bool(err <= tolerance),
            value=err, threshold=tolerance,
            detail=f"max rel err {err:.3e} over all parameters and the input "
                   f"(tol {tolerance:.0e})"))
    return results


# ---------------------------------------------------------------------------
# oracle suite
# ---------------------------------------------------------------------------

ORACLE_TOLERANCE = 1e-10


def _randomized_module(cls, spec: AttentionSpec, rng):
    store = ParameterStore(np.float64)
    module = cls(store, "a", spec, rng)
    for _, p in store.items():
        p.data[...] = rng.normal(0.0, 0.5, p.data.shape)
    return module


def run_oracle_checks(trials: int = 20, tolerance: float = ORACLE_TOLERANCE,
                      seed: int = 0):
    """Each fast mechanism against its loop-and-dense reference, double
    precision, on ``trials`` randomized instances (sizes, heads, grids,
    reduction factors and all parameters drawn fresh per instance)."""
    rng = np.random.default_rng((seed, 9001))
    results = []

    worst = 0.0
    for i in range(trials):
        nh = (1, 2, 4)[i % 3]
        c = nh * (2, 3, 4)[i % 3]
        t = 2 + i % 3
        grid = ((2, 3), (4, 4), (3, 5), (8, 8))[i % 4]
        spec = AttentionSpec(embed_dim=c, num_heads=nh, window=1, reduction=1,
                             num_groups=1, causal=True)
        module = _randomized_module(TemporalAttention, spec, rng)
        x = rng.normal(0.0, 1.0, (1 + i % 2, t, grid[0] * grid[1], c))
        fast = module(Tensor(x), grid).data
        ref = reference.temporal_attention_reference(x, module)
        worst = max(worst, float(np.abs(fast - ref).max()))
    results.append(CheckResult(
        suite="oracle", name="temporal_vs_dense", passed=bool(worst <= tolerance),
        value=worst, threshold=tolerance,
        detail=f"{trials} instances, max abs err {worst:.2e} (tol {tolerance:.0e})"))

    worst = 0.0
    for i in range(trials):
        r = 1 + i % 2
        m = (2, 4)[(i // 2) % 2]
        nh, c = (((1, 3), (2, 6), (4, 8), (2, 16))[i % 4] if r == 1
                 else ((1, 4), (2, 8), (4, 16), (2, 12))[i % 4])
        grid = (m * (1 + i % 2), m * (1 + (i // 2) % 2))
        spec = AttentionSpec(embed_dim=c, num_heads=nh, window=m, reduction=r,
                             num_groups=1, bias_shared=bool(i % 2))
        module = _randomized_module(SpatialAttention, spec, rng)
        x = rng.normal(0.0, 1.0, (1 + i % 2, 1 + i % 3, grid[0] * grid[1], c))
        fast = module(Tensor(x), grid).data
        ref = reference.spatial_attention_reference(x, module, grid)
        worst = max(worst, float(np.abs(fast - ref).max()))
    results.append(CheckResult(
        suite="oracle", name="spatial_vs_dense", passed=bool(worst <= tolerance),
        value=worst, threshold=tolerance,
        detail=f"{trials} instances at r=1 and r=2, max abs err {worst:.2e} "
               f"(tol {tolerance:.0e})"))

    worst = 0.0
    for i in range(trials):
        ng, c = ((1, 4), (2, 6), (4, 8), (8, 16), (3, 9))[i % 5]
        grid = ((2, 3), (4, 4), (3, 5), (2, 2))[i % 4]
        spec = AttentionSpec(embed_dim=c, num_heads=1, window=1, reduction=1,
                             num_groups=ng)
        module = _randomized_module(ChannelAttention, spec, rng)
        x = rng.normal(0.0, 1.0, (1 + i % 2, 1 + i % 3, grid[0] * grid[1], c))
        fast = module(Tensor(x), grid).data
        ref = reference.channel_attention_reference(x, module, grid)
        worst = max(worst, float(np.abs(fast - ref).max()))
    results.append(CheckResult(
        suite="oracle", name="channel_vs_dense", passed=bool(worst <= tolerance),
        value=worst, threshold=tolerance,
        detail=f"{trials} instances, max abs err {worst:.2e} (tol {tolerance:.0e})"))
    return results


# ---------------------------------------------------------------------------
# causality suite
# ---------------------------------------------------------------------------


def run_causality_checks(trials: int = 100, seed: int = 0):
    """Autoregressive-regime isolation: changing input frames after position
    j must leave outputs up to j bit-identical, and must actually change
    outputs after j (otherwise the check would pass vacuously)."""
    spec = ModelSpec(**{**_MICRO_SPEC, "frames_in": 4, "frames_out": 4,
                        "ar_mode": True, "causal": True})
    model = Model(spec, seed=1)
    rng = np.random.default_rng((seed, 9101))
    for _, p in model.store.items():
        p.data += (0.2 * rng.standard_normal(p.data.shape)).astype(p.data.dtype)

    leaked = 0
    unresponsive = 0
    for _ in range(trials):
        x = rng.random((1, 4, 1, 8, 8)).astype(np.float32)
        j = int(rng.integers(0, 3))
        x2 = x.copy()
        x2[:, j + 1:] = rng.random(x2[:, j + 1:].shape).astype(np.float32)
        with tensor.no_grad():
            y1 = model.forward(Tensor(x)).data
            y2 = model.forward(Tensor(x2)).data
        if not np.array_equal(y1[:, :j + 1], y2[:, :j + 1]):
            leaked += 1
        if np.array_equal(y1[:, j + 1:], y2[:, j + 1:]):
            unresponsive += 1
    return [
        CheckResult(
            suite="causality", name="prefix_bit_identical",
            passed=bool(leaked == 0), value=float(leaked), threshold=0.0,
            detail=f"{trials} trials, {leaked} leaked a future perturbation "
                   f"into past outputs"),
        CheckResult(
            suite="causality", name="suffix_responds",
            passed=bool(unresponsive == 0), value=float(unresponsive),
            threshold=0.0,
            detail=f"{trials} trials, {unresponsive} ignored the perturbation "
                   f"entirely"),
    ]


# ---------------------------------------------------------------------------
# invariant suite
# ---------------------------------------------------------------------------


def run_invariant_checks(seed: int = 0):
    """Structural identities: residual identity at initialization, exact
    shape round trips, parameter-count invariances, checkpoint fidelity."""
    rng = np.random.default_rng((seed, 9201))
    results = []

    def add(name, passed, value, threshold, detail):
        results.append(CheckResult(suite="invariant", name=name,
                                   passed=bool(passed), value=float(value),
                                   threshold=threshold, detail=detail))

    spec = ModelSpec(frames_in=3, frames_out=3, channels=1, height=16,
                     width=16, patch=4, embed_dim=16, depth=1, num_heads=4,
                     window=4, reduction=2, num_groups=8, ffn_expansion=2,
                     drop_path=0.0)
    store = ParameterStore(np.float32)
    block = Block(store, "b", spec, spec.attention_spec(),
                  np.random.default_rng(5), 0.0)
    xt = Tensor(rng.standard_normal((2, 3, 16, 16)).astype(np.float32))
    err = float(np.abs(block(xt, (4, 4), False, None).data - xt.data).max())
    add("block_identity_at_init", err == 0.0, err, 0.0,
        f"fresh block output minus input, max abs {err:.1e} (must be exact)")

    x = Tensor(rng.standard_normal((2, 2, 32, 6)))
    grid = (4, 8)
    back = window_merge(window_partition(x, grid, 4), grid, 4)
    ok = np.array_equal(back.data, x.data)
    add("window_round_trip", ok, 0.0 if ok else 1.0, 0.0,
        f"partition then merge on grid {grid}, bitwise equal: {ok}")

    xw = window_partition(x, grid, 4)
    back = token_shuffle(token_unshuffle(xw, 4, 2), 4, 2)
    ok = np.array_equal(back.data, xw.data)
    add("token_unshuffle_round_trip", ok, 0.0 if ok else 1.0, 0.0,
        f"unshuffle then shuffle at r=2, bitwise equal: {ok}")

    counts = {order: Model(ModelSpec(**{**_MICRO_SPEC, "order": order}),
                           seed=0).num_parameters()
              for order in ("tsc", "tcs", "stc", "sct", "cts", "cst")}
    ok = len(set(counts.values())) == 1
    add("param_count_order_invariant", ok, float(len(set(counts.values()))), 1.0,
        f"sequential orderings all have {counts['tsc']} parameters: {ok}")

    sizes = {}
    for h, w in ((16, 16), (40, 24), (64, 64)):
        sizes[(h, w)] = Model(ModelSpec(**{**_MICRO_SPEC, "height": h,
                                           "width": w}), seed=0).num_parameters()
    ok = len(set(sizes.values())) == 1
    add("param_count_resolution_invariant", ok, float(len(set(sizes.values()))),
        1.0, f"parameter count equal across frame sizes {list(sizes)}: {ok}")

    model = Model(ModelSpec(**_MICRO_SPEC), seed=9)
    for _, p in model.store.items():
        p.data += (0.1 * rng.standard_normal(p.data.shape)).astype(p.data.dtype)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "roundtrip.bin"
        save_checkpoint(path, model.spec, model.store.state_dict(),
                        {"step": 12})
        spec2, arrays, extra = load_checkpoint(path)
        ok = (spec2 == model.spec and extra == {"step": 12}
              and set(arrays) == set(model.store.state_dict())
              and all(np.array_equal(arrays[k], v) and arrays[k].dtype == v.dtype
                      for k, v in model.store.state_dict().items()))
    add("checkpoint_round_trip", ok, 0.0 if ok else 1.0, 0.0,
        f"spec, extra and every array bit-identical after save/load: {ok}")
    return results


def run_all(suite: str = "all"):
    """Every suite (or one of them) as a flat list of results."""
    if suite not in ("all", "gradient", "oracle", "causality", "invariant"):
        raise ValueError(f"unknown suite {suite!r}")
    results = []
    if suite in ("all", "gradient"):
        results += run_gradient_checks()
    if suite in ("all", "oracle"):
        results += run_oracle_checks()
    if suite in ("all", "causality"):
        results += run_causality_checks()
    if suite in ("all", "invariant"):
        results += run_invariant_checks()
    return results
