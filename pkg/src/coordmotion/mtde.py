"""Multi-timescale dynamics extraction from position and velocity streams."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, activation, concat, conv_channels, linear, reshape, swapaxes

BRANCHES = ("pos", "vel")


def check_timescales(timescales: Sequence[int]) -> tuple[int, ...]:
    ts = tuple(int(k) for k in timescales)
    if not ts or any(k < 1 or k % 2 == 0 for k in ts):
        raise ValueError(f"timescales must be odd positive integers, got {timescales}")
    return ts


def init_mtde(store: ParameterStore, rng: np.random.Generator, prefix: str, dim: int,
              timescales: Sequence[int], enabled: bool = True) -> None:
    for branch in BRANCHES:
        if not enabled:
            # ablation: per-frame coordinate lift only
            store.linear(rng, f"{prefix}.{branch}.lift", dim, 3)
            continue
        for i, k in enumerate(check_timescales(timescales)):
            store.conv(rng, f"{prefix}.{branch}.scale{i}", dim, 3, 1, k)
        store.conv(rng, f"{prefix}.{branch}.fuse", dim, len(timescales) * dim, 1, 1)


def _branch(x: Tensor, params: Mapping[str, Tensor], branch: str, timescales, act: str) -> Tensor:
    # x: [..., N, L, 3] -> [..., N, L, D]
    if f"{branch}.lift.weight" in params:
        return linear(x, params[f"{branch}.lift.weight"], params[f"{branch}.lift.bias"])
    xc = swapaxes(x, -1, -2)  # [..., N, 3, L]
    xc = reshape(xc, xc.shape[:-1] + (1, xc.shape[-1]))  # [..., N, 3, 1, L]
    feats = []
    for i, k in enumerate(timescales):
        w = params[f"{branch}.scale{i}.weight"]
        if w.shape[-1] != k:
            raise ValueError(f"mtde: {branch}.scale{i} has kernel width {w.shape[-1]}, timescale is {k}")
        y = conv_channels(xc, w, params[f"{branch}.scale{i}.bias"], (0, (k - 1) // 2))
        feats.append(activation(y, act))
    fused = conv_channels(concat(feats, axis=-3), params[f"{branch}.fuse.weight"], params[f"{branch}.fuse.bias"])
    fused = reshape(fused, fused.shape[:-2] + (fused.shape[-1],))  # [..., N, D, L]
    return swapaxes(fused, -1, -2)


def mtde_forward(p: Tensor, v: Tensor, params: Mapping[str, Tensor],
                 timescales: Sequence[int] = (1, 3, 5), act: str = "leaky_relu") -> Tensor:
    """p: [..., N, T_p, 3], v: [..., N, T_p - 1, 3] -> X_d: [..., N, 2*T_p - 1, D].

    Each branch runs one temporal convolution per timescale on every joint
    independently, activates, stacks the results along channels and fuses them
    with a 1x1 convolution; the two branches are then joined along time
    (positions first, then velocities).
    """
    if p.shape[-1] != 3 or v.shape[-1] != 3 or p.shape[-2] < 2 or v.shape[-2] != p.shape[-2] - 1:
        raise ValueError(f"mtde_forward: expected p [..., N, T_p, 3] and v [..., N, T_p-1, 3], got {p.shape}, {v.shape}")
    timescales = check_timescales(timescales)
    d_p = _branch(p, params, "pos", timescales, act)
    d_v = _branch(v, params, "vel", timescales, act)
    return concat([d_p, d_v], axis=-2)
