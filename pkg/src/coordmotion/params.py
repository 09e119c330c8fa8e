"""Named trainable tensors and their initialization."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class ParameterStore:
    """Ordered name -> Tensor map. Insertion order is the canonical iteration order."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name '{name}'")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def linear(self, rng, name: str, out_features: int, in_features: int, bias: bool = True) -> None:
        self.add(f"{name}.weight", uniform_init(rng, (out_features, in_features), in_features))
        if bias:
            self.add(f"{name}.bias", uniform_init(rng, (out_features,), in_features))

    def conv(self, rng, name: str, c_out: int, c_in: int, kh: int, kw: int) -> None:
        fan_in = c_in * kh * kw
        self.add(f"{name}.weight", uniform_init(rng, (c_out, c_in, kh, kw), fan_in))
        self.add(f"{name}.bias", uniform_init(rng, (c_out,), fan_in))

    def scope(self, prefix: str) -> dict[str, Tensor]:
        """View of the parameters under `prefix.`, keyed by the remaining name."""
        head = prefix + "."
        return {k[len(head):]: v for k, v in self._params.items() if k.startswith(head)}

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None
