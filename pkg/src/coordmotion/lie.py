"""Local interaction extraction: adjacent-joint convolution and distant-joint non-local attention."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, activation, conv_channels, linear, matmul, moveaxis, reshape, softmax_rows, swapaxes


def init_lie(store: ParameterStore, rng: np.random.Generator, prefix: str, traj: int, embed_dim: int) -> None:
    if embed_dim < 1:
        raise ValueError("non-local embed dimension must be >= 1")
    store.conv(rng, f"{prefix}.adjacent", traj, traj, 3, 3)
    store.linear(rng, f"{prefix}.theta", embed_dim, traj)
    store.linear(rng, f"{prefix}.phi", embed_dim, traj)
    store.linear(rng, f"{prefix}.g", embed_dim, traj)
    store.linear(rng, f"{prefix}.out", traj, embed_dim)
    store.linear(rng, f"{prefix}.distant", traj, traj)


def adjacent_path(x: Tensor, params: Mapping[str, Tensor], act: str) -> Tensor:
    """3x3 "same" convolution over the (joint, feature) plane with trajectory channels."""
    xt = moveaxis(x, -1, -3)
    y = conv_channels(xt, params["adjacent.weight"], params["adjacent.bias"], (1, 1))
    return moveaxis(activation(y, act), -3, -1)


def nonlocal_attention(x: Tensor, params: Mapping[str, Tensor], return_attention: bool = False):
    """Non-local block without residual over the N*D pixels of [..., N, D, T].

    No 1/sqrt(d) scaling and no extra normalizer beyond the softmax.
    """
    n, d, t = x.shape[-3:]
    q = reshape(x, x.shape[:-3] + (n * d, t))
    theta = linear(q, params["theta.weight"], params["theta.bias"])
    phi = linear(q, params["phi.weight"], params["phi.bias"])
    g = linear(q, params["g.weight"], params["g.bias"])
    attn = softmax_rows(matmul(theta, swapaxes(phi, -1, -2)))
    y = linear(matmul(attn, g), params["out.weight"], params["out.bias"])
    y = reshape(y, x.shape[:-3] + (n, d, t))
    return (y, attn) if return_attention else y


def distant_path(x: Tensor, params: Mapping[str, Tensor], act: str) -> Tensor:
    y = nonlocal_attention(x, params)
    return activation(linear(y, params["distant.weight"], params["distant.bias"]), act)


def lie_forward(x: Tensor, params: Mapping[str, Tensor], act: str = "leaky_relu") -> tuple[Tensor, Tensor]:
    """Returns (F_adjacent, F_distant)."""
    return adjacent_path(x, params, act), distant_path(x, params, act)
