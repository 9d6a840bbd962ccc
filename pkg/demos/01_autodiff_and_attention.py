"""A tour of the tensor engine and the attention modules.

Builds a small computation and differentiates it, checks one gradient
entry against a finite difference computed by hand, runs a temporal
attention module against the dense reference implementation, and shows
the causal mask doing its job: perturbing a future frame never changes
a past output.  Finishes with a slice of the built-in gradient suite.
"""

import numpy as np

from framecast import Tensor, gelu, layer_norm, matmul, softmax
from framecast.attention import AttentionSpec, TemporalAttention, causal_mask
from framecast.params import ParameterStore
from framecast import reference, verify


def scalar_loss(x, w, gain, shift):
    h = layer_norm(gelu(matmul(x, w)), gain, shift)
    return (softmax(h, axis=-1) * h).sum()


def main():
    rng = np.random.default_rng(0)

    print("== reverse-mode autodiff ==")
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    gain = Tensor(np.ones(2), requires_grad=True)
    shift = Tensor(np.zeros(2), requires_grad=True)
    loss = scalar_loss(x, w, gain, shift)
    loss.backward()
    print(f"loss = {loss.item():.6f}")
    print(f"dloss/dw =\n{w.grad}")

    # the same derivative, the pedestrian way
    h = 1e-6
    w.data[0, 0] += h
    up = scalar_loss(x, w, gain, shift).item()
    w.data[0, 0] -= 2 * h
    down = scalar_loss(x, w, gain, shift).item()
    w.data[0, 0] += h
    fd = (up - down) / (2 * h)
    print(f"finite difference for w[0,0]: {fd:.8f} vs autodiff {w.grad[0, 0]:.8f}")

    print()
    print("== temporal attention vs the dense reference ==")
    spec = AttentionSpec(embed_dim=8, num_heads=2, window=1, reduction=1,
                         num_groups=1, causal=True)
    store = ParameterStore(np.float64)
    module = TemporalAttention(store, "demo", spec, rng)
    for _, p in store.items():
        p.data += rng.normal(0.0, 0.5, p.shape)  # fresh modules output zeros
    seq = rng.normal(size=(1, 4, 6, 8))  # [batch, frames, tokens, channels]
    fast = module(Tensor(seq), (2, 3)).data
    dense = reference.temporal_attention_reference(seq, module)
    print(f"max |fast - dense| = {np.abs(fast - dense).max():.3e}")

    print()
    print("== the causal mask ==")
    print(f"mask for 4 frames (True = blocked):\n{causal_mask(4)}")
    bumped = seq.copy()
    bumped[:, 3] += 10.0  # clobber the last frame
    out_b = module(Tensor(bumped), (2, 3)).data
    same = np.array_equal(fast[:, :3], out_b[:, :3])
    print(f"frames 0..2 bit-identical after bumping frame 3: {same}")
    print(f"frame 3 changed: {not np.array_equal(fast[:, 3], out_b[:, 3])}")

    print()
    print("== a slice of the gradient suite ==")
    for r in verify.run_gradient_checks(names={"softmax", "conv2d", "layer_norm"}):
        print(r.line())


if __name__ == "__main__":
    main()
