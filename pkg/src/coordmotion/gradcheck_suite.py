"""Finite-difference checks of every trainable module at fixed toy shapes."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import affm, gce, lie, mtde
from .model import ModelConfig, init_params, network_forward
from .params import ParameterStore
from .tensor import GradCheckReport, Tensor, grad_check, mul, ops, reduce_sum
from .training import mpjpe_loss

MODULES = ("kernels", "mtde", "gce", "lie", "affm", "net")


def toy_config(activation: str = "tanh", **overrides) -> ModelConfig:
    """Toy shapes for finite-difference checks.

    Composite checks default to tanh: piecewise-linear activations put kinks
    within a step h of some pre-activation and central differences break there.
    leaky_relu is still checked as a kernel, away from its kink.
    """
    base = dict(joints=5, feature_dim=4, traj_dim=6, obs_frames=4, out_frames=3, block_count=2,
                affm_reduction=3, activation=activation, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def _probe(out: Tensor, rng: np.random.Generator) -> Tensor:
    # fixed random projection so every output entry carries gradient
    weights = Tensor(rng.uniform(-1.0, 1.0, size=out.shape))
    return reduce_sum(mul(out, weights))


def _kernel_cases():
    rng = np.random.default_rng(99)

    def leaf(*shape, low=-1.0, high=1.0):
        return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)

    x4 = leaf(2, 3, 4, 5)
    w4 = leaf(4, 3, 3, 3)
    b4 = leaf(4)
    yield "conv_channels", lambda: _probe(ops.conv_channels(x4, w4, b4, (1, 1)), np.random.default_rng(1)), \
        {"x": x4, "w": w4, "b": b4}
    a3, b3 = leaf(2, 3, 4), leaf(2, 4, 2)
    yield "matmul", lambda: _probe(ops.matmul(a3, b3), np.random.default_rng(1)), {"a": a3, "b": b3}
    s2 = leaf(3, 5, low=-3.0, high=3.0)
    yield "softmax_rows", lambda: _probe(ops.softmax_rows(s2), np.random.default_rng(1)), {"x": s2}
    c2 = leaf(2, 4, 3)
    yield "cosine_similarity_rows", lambda: _probe(ops.cosine_similarity_rows(c2), np.random.default_rng(1)), {"x": c2}
    r2 = leaf(3, 4, 3)
    yield "row_norm", lambda: _probe(ops.row_norm(r2), np.random.default_rng(1)), {"x": r2}
    lin_x, lin_w, lin_b = leaf(2, 3, 4), leaf(5, 4), leaf(5)
    yield "linear", lambda: _probe(ops.linear(lin_x, lin_w, lin_b), np.random.default_rng(1)), \
        {"x": lin_x, "w": lin_w, "b": lin_b}
    # activations sampled away from 0 so no step crosses the leaky_relu kink
    signs = np.where(rng.uniform(size=(3, 4)) < 0.5, -1.0, 1.0)
    act_x = Tensor(signs * rng.uniform(0.2, 1.5, size=(3, 4)), requires_grad=True)
    for kind in ("tanh", "leaky_relu", "sigmoid"):
        yield kind, (lambda k=kind: _probe(ops.activation(act_x, k), np.random.default_rng(1))), {"x": act_x}
    e1, e2 = leaf(3, 1, 4), leaf(1, 2, 4)

    def elementwise():
        probe_rng = np.random.default_rng(1)
        total = _probe(ops.add(e1, e2), probe_rng) + _probe(ops.sub(e1, e2), probe_rng)
        total = total + _probe(ops.mul(e1, e2), probe_rng)
        total = total + _probe(ops.reduce_mean(ops.transpose(e1, (2, 0, 1)), axes=(0,)), probe_rng)
        total = total + _probe(ops.concat([e1, ops.reshape(e2, (2, 1, 4))], axis=0), probe_rng)
        return total + _probe(ops.slice_axis(e1, -1, 1, 3), probe_rng)

    yield "elementwise", elementwise, {"a": e1, "b": e2}


def _case(module: str, cfg: ModelConfig) -> tuple[Callable[[], Tensor], dict[str, Tensor]]:
    rng = np.random.default_rng(1234)
    store = ParameterStore()
    n, d, t = cfg.joints, cfg.feature_dim, cfg.traj_dim
    act = cfg.activation
    x = Tensor(rng.uniform(-1.0, 1.0, size=(2, n, d, t)))
    if module == "mtde":
        mtde.init_mtde(store, rng, "mtde", d, cfg.timescales)
        p = Tensor(rng.uniform(-1.0, 1.0, size=(2, n, cfg.obs_frames, 3)))
        v = Tensor(np.diff(p.data, axis=-2))
        params = store.scope("mtde")
        f = lambda: _probe(mtde.mtde_forward(p, v, params, cfg.timescales, act), np.random.default_rng(7))  # noqa: E731
    elif module == "gce":
        gce.init_gce(store, rng, "gce", n, t)
        params = store.scope("gce")
        f = lambda: _probe(gce.gce_forward(x, params, act), np.random.default_rng(7))  # noqa: E731
    elif module == "lie":
        lie.init_lie(store, rng, "lie", t, cfg.nonlocal_dim)
        params = store.scope("lie")

        def f():
            adj, dist = lie.lie_forward(x, params, act)
            probe_rng = np.random.default_rng(7)
            return _probe(adj, probe_rng) + _probe(dist, probe_rng)
    elif module == "affm":
        affm.init_affm(store, rng, "affm", 3 * t, cfg.affm_reduction)
        params = store.scope("affm")
        streams = [Tensor(rng.uniform(-1.0, 1.0, size=(2, n, d, t))) for _ in range(3)]
        f = lambda: _probe(affm.affm_forward(streams, params, act)[0], np.random.default_rng(7))  # noqa: E731
    elif module == "net":
        net_cfg = cfg.replace(zero_init_head=False, zero_init_proj=False)
        store = init_params(net_cfg)
        obs = rng.uniform(-1.0, 1.0, size=(2, cfg.obs_frames, n, 3))
        target = rng.uniform(-1.0, 1.0, size=(2, cfg.out_frames, n, 3))
        f = lambda: mpjpe_loss(network_forward(obs, store, net_cfg), target)  # noqa: E731
    else:
        raise ValueError(f"unknown module '{module}', expected one of {MODULES} or 'all'")
    return f, dict(store.items())


def run_gradcheck(module: str, tol: float = 1e-4, h: float = 1e-5, cfg: ModelConfig | None = None) -> dict[str, GradCheckReport]:
    cfg = cfg or toy_config()
    names = MODULES if module == "all" else (module,)
    reports = {}
    for name in names:
        if name == "kernels":
            merged = GradCheckReport(tol=tol)
            for kernel, f, params in _kernel_cases():
                rep = grad_check(f, params, h=h, tol=tol)
                merged.per_param.update({f"{kernel}.{k}": v for k, v in rep.per_param.items()})
            reports[name] = merged
            continue
        f, params = _case(name, cfg)
        reports[name] = grad_check(f, params, h=h, tol=tol)
    return reports
