import numpy as np
import pytest

from coordmotion import mtde
from coordmotion.tensor import Tensor

from helpers import scoped
from oracles import mtde_loop


def inputs(rng, n, t_p, batch=()):
    p = rng.uniform(-1, 1, size=batch + (n, t_p, 3))
    return Tensor(p), Tensor(np.diff(p, axis=-2))


def test_default_shape(rng):
    params, _ = scoped(mtde.init_mtde, 32, (1, 3, 5))
    p, v = inputs(rng, 22, 10)
    assert mtde.mtde_forward(p, v, params).shape == (22, 19, 32)


@pytest.mark.parametrize("t_p", [2, 3, 7])
def test_output_length(rng, t_p):
    params, _ = scoped(mtde.init_mtde, 4, (1, 3, 5))
    p, v = inputs(rng, 3, t_p, batch=(2,))
    assert mtde.mtde_forward(p, v, params).shape == (2, 3, 2 * t_p - 1, 4)


def test_degenerate_kernels_are_per_frame_maps(rng):
    params, _ = scoped(mtde.init_mtde, 3, (1, 1, 1))
    for name, t in params.items():
        t.data[...] = 0.0
    for branch in mtde.BRANCHES:
        for i in range(3):
            params[f"{branch}.scale{i}.weight"].data[:, :, 0, 0] = np.eye(3)
        fuse = params[f"{branch}.fuse.weight"]
        fuse.data[:, :, 0, 0] = np.hstack([np.eye(3)] * 3)
    p, v = inputs(rng, 4, 5)
    out = mtde.mtde_forward(p, v, params, (1, 1, 1), "identity").data
    np.testing.assert_allclose(out[:, :5], 3.0 * p.data, atol=1e-15)
    np.testing.assert_allclose(out[:, 5:], 3.0 * v.data, atol=1e-15)


@pytest.mark.parametrize("kind", ["tanh", "leaky_relu"])
def test_matches_loop_oracle(rng, kind):
    params, raw = scoped(mtde.init_mtde, 4, (1, 3, 5))
    p, v = inputs(rng, 3, 6)
    out = mtde.mtde_forward(p, v, params, (1, 3, 5), kind).data
    assert np.abs(out - mtde_loop(p.data, v.data, raw, (1, 3, 5), kind)).max() <= 1e-12


def test_joint_permutation_equivariance(rng):
    params, _ = scoped(mtde.init_mtde, 4, (1, 3, 5))
    p, v = inputs(rng, 5, 6)
    perm = rng.permutation(5)
    base = mtde.mtde_forward(p, v, params).data
    permuted = mtde.mtde_forward(Tensor(p.data[perm]), Tensor(v.data[perm]), params).data
    np.testing.assert_array_equal(permuted, base[perm])


def test_even_timescale_rejected():
    with pytest.raises(ValueError, match="odd"):
        mtde.check_timescales((1, 2))


def test_shape_mismatch(rng):
    params, _ = scoped(mtde.init_mtde, 4, (1, 3))
    p, _ = inputs(rng, 3, 5)
    with pytest.raises(ValueError):
        mtde.mtde_forward(p, p, params, (1, 3))


def test_disabled_is_per_frame_lift(rng):
    params, raw = scoped(mtde.init_mtde, 4, (1, 3, 5), False)
    assert sorted(params) == ["pos.lift.bias", "pos.lift.weight", "vel.lift.bias", "vel.lift.weight"]
    p, v = inputs(rng, 3, 4)
    out = mtde.mtde_forward(p, v, params).data
    np.testing.assert_allclose(out[:, :4], p.data @ raw["pos.lift.weight"].T + raw["pos.lift.bias"], atol=1e-14)
