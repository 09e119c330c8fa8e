"""Channel-attention fusion of the distant / coordination / adjacent feature streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, activation, concat, linear, mul, reduce_mean, reshape, sigmoid

STREAM_ORDER = ("distant", "ca", "adjacent")


def gate_width(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


def init_affm(store: ParameterStore, rng: np.random.Generator, prefix: str, channels: int, reduction: int) -> None:
    hidden = gate_width(channels, reduction)
    store.linear(rng, f"{prefix}.a1", hidden, channels)
    store.linear(rng, f"{prefix}.a2", channels, hidden)


def affm_forward(
    streams: Sequence[Tensor],
    params: Mapping[str, Tensor] | None,
    act: str = "leaky_relu",
    ratio_override: np.ndarray | None = None,
) -> tuple[Tensor, Tensor | None]:
    """Concatenate [..., N, D, T] streams along channels and rescale each channel.

    Returns (F_out [..., N, D, k*T], ratio [..., k*T]). With `params=None` the
    gate is skipped: F_out is the plain concatenation and ratio is None.
    `ratio_override` replaces the learned gate with fixed values.
    """
    shapes = {s.shape for s in streams}
    if len(shapes) != 1:
        raise ValueError(f"affm_forward: stream shapes differ: {sorted(shapes)}")
    f_concat = concat(list(streams), axis=-1)
    if ratio_override is not None:
        ratio = Tensor(np.broadcast_to(np.asarray(ratio_override, dtype=np.float64), f_concat.shape[:-3] + f_concat.shape[-1:]).copy())
    elif params is None:
        return f_concat, None
    else:
        pooled = reduce_mean(f_concat, axes=(-3, -2))  # [..., C]
        hidden = activation(linear(pooled, params["a1.weight"], params["a1.bias"]), act)
        ratio = sigmoid(linear(hidden, params["a2.weight"], params["a2.bias"]))
    gate = reshape(ratio, ratio.shape[:-1] + (1, 1, ratio.shape[-1]))
    return mul(f_concat, gate), ratio


@dataclass(frozen=True)
class FusionReport:
    w_distant: float
    w_adjacent: float
    w_ca: float

    def as_row(self) -> str:
        return f"{self.w_distant:.2f} {self.w_adjacent:.2f} {self.w_ca:.2f}"


def relative_weights(ratio) -> FusionReport:
    """Mean gate value per stream group (distant, ca, adjacent), normalized to sum to one.

    `ratio` may carry leading axes (samples, blocks); they are averaged out.
    """
    r = np.asarray(ratio, dtype=np.float64)
    channels = r.shape[-1]
    if channels % 3:
        raise ValueError(f"ratio width {channels} is not three equal groups")
    groups = r.reshape(-1, 3, channels // 3).mean(axis=(0, 2))
    w = groups / groups.sum()
    return FusionReport(w_distant=float(w[0]), w_adjacent=float(w[2]), w_ca=float(w[1]))
