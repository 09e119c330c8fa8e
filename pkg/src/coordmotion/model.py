"""Full predictor: dynamics extraction, trajectory-space head, stacked relation blocks, output head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import affm, gce, lie, mtde
from .data import compute_velocity
from .params import ParameterStore
from .tensor import ACTIVATIONS, Tensor, activation, add, as_tensor, linear, swapaxes


def default_lateral_pairs(block_count: int) -> tuple[tuple[int, int], ...]:
    """Symmetric U-Net style skips (1-indexed): (1, n), (2, n-1), ... while the pair spans >= 2 blocks."""
    return tuple((i, block_count + 1 - i) for i in range(1, block_count + 1) if block_count + 1 - i - i >= 2)


@dataclass
class ModelConfig:
    joints: int = 22
    feature_dim: int = 32  # D
    traj_dim: int = 64  # T
    obs_frames: int = 10  # T_p
    out_frames: int = 10  # T_out
    timescales: tuple[int, ...] = (1, 3, 5)
    block_count: int = 9
    lateral_pairs: Optional[tuple[tuple[int, int], ...]] = None
    activation: str = "leaky_relu"
    affm_reduction: int = 8
    embed_dim: Optional[int] = None  # non-local bottleneck, T // 2 when unset
    use_mtde: bool = True
    use_gce: bool = True
    use_lie: bool = True
    use_affm: bool = True
    use_relative_joints: bool = True
    multi_graph: bool = True
    similarity: str = "cosine"
    serial_mode: bool = False
    residual_output: bool = True
    zero_init_head: bool = True
    zero_init_proj: bool = True
    seed: int = 0

    def __post_init__(self):
        self.timescales = tuple(int(k) for k in self.timescales)
        if self.lateral_pairs is None:
            self.lateral_pairs = default_lateral_pairs(self.block_count)
        self.lateral_pairs = tuple((int(i), int(j)) for i, j in self.lateral_pairs)
        self.validate()

    @property
    def nonlocal_dim(self) -> int:
        return self.embed_dim if self.embed_dim is not None else max(1, self.traj_dim // 2)

    @property
    def streams(self) -> tuple[str, ...]:
        """Feature streams entering the fusion gate, in concatenation order."""
        enabled = {"distant": self.use_lie, "ca": self.use_gce, "adjacent": self.use_lie}
        return tuple(s for s in affm.STREAM_ORDER if enabled[s])

    def validate(self) -> None:
        if self.joints < 2 or self.feature_dim < 1 or self.traj_dim < 1:
            raise ValueError("joints >= 2, feature_dim >= 1, traj_dim >= 1 required")
        if self.obs_frames < 2 or self.out_frames < 1:
            raise ValueError("obs_frames >= 2 and out_frames >= 1 required")
        if self.block_count < 1:
            raise ValueError("block_count must be >= 1")
        mtde.check_timescales(self.timescales)
        for i, j in self.lateral_pairs:
            if not 1 <= i < j <= self.block_count:
                raise ValueError(f"lateral pair ({i}, {j}) must satisfy 1 <= i < j <= {self.block_count}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.similarity not in gce.SIMILARITIES:
            raise ValueError(f"similarity must be one of {gce.SIMILARITIES}")
        if not (self.use_gce or self.use_lie):
            raise ValueError("at least one of use_gce / use_lie must be enabled")
        if self.affm_reduction < 1 or (3 * self.traj_dim) % self.affm_reduction:
            raise ValueError(f"3*traj_dim={3 * self.traj_dim} must be divisible by affm_reduction={self.affm_reduction}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["timescales"] = list(self.timescales)
        d["lateral_pairs"] = [list(p) for p in self.lateral_pairs]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        kw = dict(d)
        if kw.get("lateral_pairs") is not None:
            kw["lateral_pairs"] = tuple(tuple(p) for p in kw["lateral_pairs"])
        return cls(**kw)

    def replace(self, **changes) -> "ModelConfig":
        if "block_count" in changes and "lateral_pairs" not in changes:
            changes["lateral_pairs"] = None
        return dataclasses.replace(self, **changes)


def init_params(config: ModelConfig) -> ParameterStore:
    rng = np.random.default_rng(config.seed)
    store = ParameterStore()
    n, d, t = config.joints, config.feature_dim, config.traj_dim
    mtde.init_mtde(store, rng, "mtde", d, config.timescales, enabled=config.use_mtde)
    store.linear(rng, "head_in", t, 2 * config.obs_frames - 1)
    width = len(config.streams) * t
    for b in range(1, config.block_count + 1):
        prefix = f"block{b}"
        if config.use_gce:
            gce.init_gce(store, rng, f"{prefix}.gce", n, t)
        if config.use_lie:
            lie.init_lie(store, rng, f"{prefix}.lie", t, config.nonlocal_dim)
        if config.use_affm:
            affm.init_affm(store, rng, f"{prefix}.affm", width, config.affm_reduction)
        store.linear(rng, f"{prefix}.proj", t, width)
        if config.zero_init_proj:
            # every block starts as the identity; keeps the residual stream from compounding with depth
            store[f"{prefix}.proj.weight"].data[...] = 0.0
            store[f"{prefix}.proj.bias"].data[...] = 0.0
    store.linear(rng, "head_time", config.out_frames, t)
    store.linear(rng, "head_coord", 3, d)
    if config.zero_init_head:
        store["head_coord.weight"].data[...] = 0.0
        store["head_coord.bias"].data[...] = 0.0
    return store


def input_head(x_d: Tensor, params: Mapping[str, Tensor], act: str) -> Tensor:
    """[..., N, 2T_p-1, D] -> [..., N, D, T]: learned map from the frame axis to trajectory channels."""
    return activation(linear(swapaxes(x_d, -1, -2), params["weight"], params["bias"]), act)


def cjre_block(x: Tensor, params: Mapping[str, Tensor], config: ModelConfig,
               ratio_override: np.ndarray | None = None) -> tuple[Tensor, Tensor | None]:
    """One relation block: (GCE || LIE) -> fusion -> projection back to T channels + residual.

    Returns (block output [..., N, D, T], fusion ratio or None).
    """
    act = config.activation
    f_ca = f_adj = f_dist = None
    if config.use_gce:
        gce_params = {k[4:]: v for k, v in params.items() if k.startswith("gce.")}
        f_ca = gce.gce_forward(x, gce_params, act, config.use_relative_joints, config.multi_graph, config.similarity)
    if config.use_lie:
        lie_params = {k[4:]: v for k, v in params.items() if k.startswith("lie.")}
        lie_in = f_ca if (config.serial_mode and f_ca is not None) else x
        f_adj, f_dist = lie.lie_forward(lie_in, lie_params, act)
    by_name = {"distant": f_dist, "ca": f_ca, "adjacent": f_adj}
    streams = [by_name[s] for s in config.streams]
    affm_params = {k[5:]: v for k, v in params.items() if k.startswith("affm.")} if config.use_affm else None
    f_out, ratio = affm.affm_forward(streams, affm_params, act, ratio_override)
    return add(x, linear(f_out, params["proj.weight"], params["proj.bias"])), ratio


def prepare_inputs(observed) -> tuple[Tensor, Tensor, np.ndarray]:
    """observed [..., T_p, N, 3] -> (positions [..., N, T_p, 3], velocities [..., N, T_p-1, 3], last frame)."""
    obs = np.asarray(observed.data if isinstance(observed, Tensor) else observed, dtype=np.float64)
    vel = np.moveaxis(compute_velocity(np.moveaxis(obs, -3, 0)), 0, -3)
    return Tensor(np.swapaxes(obs, -3, -2).copy()), Tensor(np.swapaxes(vel, -3, -2).copy()), obs[..., -1:, :, :]


def network_forward(observed, store: ParameterStore, config: ModelConfig,
                    trace: Optional[dict] = None) -> Tensor:
    """observed [B, T_p, N, 3] (or unbatched [T_p, N, 3]) -> predicted [B, T_out, N, 3].

    If `trace` is a dict, per-block fusion ratios are stored under "ratios".
    """
    obs = np.asarray(observed.data if isinstance(observed, Tensor) else observed)
    if obs.shape[-3:] != (config.obs_frames, config.joints, 3):
        raise ValueError(f"observed shape {obs.shape} does not match config (T_p={config.obs_frames}, N={config.joints})")
    act = config.activation
    p, v, last = prepare_inputs(obs)
    x_d = mtde.mtde_forward(p, v, store.scope("mtde"), config.timescales, act)
    x = input_head(x_d, store.scope("head_in"), act)

    outputs: list[Tensor] = []
    ratios = []
    incoming = {j: [i for i, jj in config.lateral_pairs if jj == j] for j in range(1, config.block_count + 1)}
    for b in range(1, config.block_count + 1):
        for i in incoming[b]:
            x = add(x, outputs[i - 1])
        x, ratio = cjre_block(x, store.scope(f"block{b}"), config)
        outputs.append(x)
        if ratio is not None:
            ratios.append(ratio.data)

    y = linear(x, store["head_time.weight"], store["head_time.bias"])  # [..., N, D, T_out]
    y = linear(swapaxes(y, -1, -2), store["head_coord.weight"], store["head_coord.bias"])  # [..., N, T_out, 3]
    y = swapaxes(y, -3, -2)  # [..., T_out, N, 3]
    if config.residual_output:
        y = add(y, as_tensor(last))
    if trace is not None:
        trace["ratios"] = np.stack(ratios, axis=-2) if ratios else None
    return y


def predict(observed: np.ndarray, store: ParameterStore, config: ModelConfig) -> np.ndarray:
    from .tensor import no_grad

    with no_grad():
        return network_forward(observed, store, config).data.copy()
