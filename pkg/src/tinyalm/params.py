"""Named parameter registry with per-name trainable flags."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParamStore:
    """Map from dotted path to Tensor. A tensor's requires_grad flag is its
    trainable flag; frozen entries must stay bit-identical across training."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter name already registered: {name}")
        tensor.requires_grad = trainable
        self._params[name] = tensor
        return tensor

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

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    def frozen_items(self):
        return [(n, p) for n, p in self._params.items() if not p.requires_grad]

    def trainable_count(self) -> int:
        return sum(p.size for _, p in self.trainable_items())

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None

    def snapshot(self) -> dict:
        """Bitwise copy of every tensor, for freeze/round-trip comparisons."""
        return {n: p.data.copy() for n, p in self._params.items()}


def seeded_rng(*key) -> np.random.Generator:
    """Deterministic generator from an integer key path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


def randn_tensor(rng, shape, std=1.0, dtype=np.float32, trainable=True) -> Tensor:
    data = (rng.standard_normal(shape) * std).astype(dtype)
    return Tensor(data, requires_grad=trainable)


def zeros_tensor(shape, dtype=np.float32, trainable=True) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=trainable)


def ones_tensor(shape, dtype=np.float32, trainable=True) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=trainable)
