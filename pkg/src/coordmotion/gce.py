"""Global coordination extraction: coordination attractor, relative joints, relation graphs."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .params import ParameterStore
from .tensor import (
    Tensor,
    activation,
    conv_channels,
    cosine_similarity_rows,
    linear,
    matmul,
    moveaxis,
    reduce_mean,
    reshape,
    softmax_rows,
    sub,
    swapaxes,
)

SIMILARITIES = ("cosine", "softmax_dot")
COSINE_EPS = 1e-8


def init_gce(store: ParameterStore, rng: np.random.Generator, prefix: str, joints: int, traj: int) -> None:
    store.conv(rng, f"{prefix}.ca", 1, joints, 1, 1)
    store.linear(rng, f"{prefix}.emb", traj, traj)
    store.conv(rng, f"{prefix}.intra", traj, traj, 1, 3)


def coordination_attractor(x: Tensor, params: Mapping[str, Tensor], act: str) -> Tensor:
    """[..., N, D, T] -> [..., 1, D, T]: a 1x1 convolution that treats joints as input channels."""
    return activation(conv_channels(x, params["ca.weight"], params["ca.bias"]), act)


def feature_normalize(x: Tensor, ca: Tensor) -> Tensor:
    return sub(x, ca)


def embed(x_r: Tensor, params: Mapping[str, Tensor], act: str) -> Tensor:
    """Per-pixel linear map over the trajectory axis, [..., N, D, T] -> [..., N, D, T]."""
    return activation(linear(x_r, params["emb.weight"], params["emb.bias"]), act)


def similarity_graphs(x_emb: Tensor, similarity: str = "cosine", multi_graph: bool = True) -> Tensor:
    """Joint-by-joint relation matrices, one per trajectory channel: [..., T, N, N].

    With `multi_graph=False` a single graph is built from the channel-mean
    embedding and returned as [..., 1, N, N].
    """
    if multi_graph:
        rows = moveaxis(x_emb, -1, -3)  # [..., T, N, D]
    else:
        mean = reduce_mean(x_emb, axes=-1)  # [..., N, D]
        rows = reshape(mean, mean.shape[:-2] + (1,) + mean.shape[-2:])
    if similarity == "cosine":
        return cosine_similarity_rows(rows, COSINE_EPS)
    if similarity == "softmax_dot":
        return softmax_rows(matmul(rows, swapaxes(rows, -1, -2)))
    raise ValueError(f"unknown similarity '{similarity}', expected one of {SIMILARITIES}")


def relation_graphs(x_r: Tensor, params: Mapping[str, Tensor], act: str,
                    similarity: str = "cosine", multi_graph: bool = True) -> Tensor:
    return similarity_graphs(embed(x_r, params, act), similarity, multi_graph)


def intra_features(x: Tensor, params: Mapping[str, Tensor], act: str) -> Tensor:
    """Kernel-3 convolution along the feature axis only; trajectory channels in and out. Returns [..., T, N, D]."""
    xt = moveaxis(x, -1, -3)
    return activation(conv_channels(xt, params["intra.weight"], params["intra.bias"], (0, 1)), act)


def gce_forward(
    x: Tensor,
    params: Mapping[str, Tensor],
    act: str = "leaky_relu",
    use_relative_joints: bool = True,
    multi_graph: bool = True,
    similarity: str = "cosine",
    return_graphs: bool = False,
):
    """F_ca [..., N, D, T]: each trajectory channel's relation graph aggregates intra-joint features.

    The graph-feature product is a per-channel (N x N) @ (N x D) matrix product.
    """
    source = feature_normalize(x, coordination_attractor(x, params, act)) if use_relative_joints else x
    graphs = relation_graphs(source, params, act, similarity, multi_graph)
    z = intra_features(x, params, act)
    f_ca = moveaxis(matmul(graphs, z), -3, -1)
    return (f_ca, graphs) if return_graphs else f_ca
