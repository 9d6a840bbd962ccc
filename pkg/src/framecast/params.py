"""Parameter registration and initialization helpers.

A ParameterStore is an ordered name -> Tensor mapping.  Modules register
their weights at construction time, so the registration order (and with it
the checkpoint record order) is fixed by the model architecture alone.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class ParameterStore:
    """Ordered collection of trainable tensors, keyed by dotted names."""

    def __init__(self, dtype=np.float32):
        dtype = np.dtype(dtype)
        if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise TypeError(f"parameter dtype must be float32 or float64, got {dtype}")
        self.dtype = dtype
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(array, dtype=self.dtype), requires_grad=True,
                   name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        """Copy arrays into the existing tensors.  Names and shapes must
        match the store exactly; dtype is converted to the store's."""
        missing = [n for n in self._params if n not in state]
        extra = [n for n in state if n not in self._params]
        if missing or extra:
            raise KeyError(
                f"state dict mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, t in self._params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: stored shape {arr.shape} != expected {t.data.shape}")
            t.data = np.ascontiguousarray(arr, dtype=self.dtype)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) with rejection resampling outside ``bound`` sigmas."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std
