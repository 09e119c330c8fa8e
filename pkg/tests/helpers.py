"""Small shared builders for module tests."""

import numpy as np

from coordmotion.params import ParameterStore
from coordmotion.tensor import Tensor


def scoped(init, *args, seed=0, prefix="m"):
    """Run an init_* function on a fresh store; return (tensor params, numpy params)."""
    store = ParameterStore()
    init(store, np.random.default_rng(seed), prefix, *args)
    params = store.scope(prefix)
    return params, {k: v.data.copy() for k, v in params.items()}


def randomize(params, rng, scale=1.0):
    for p in params.values():
        p.data[...] = rng.uniform(-scale, scale, size=p.shape)


def const(a):
    return Tensor(np.asarray(a, dtype=np.float64))
