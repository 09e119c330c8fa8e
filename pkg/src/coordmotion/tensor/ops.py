"""Differentiable kernels.

Every kernel accepts arbitrary leading (batch) axes unless noted, computes its
forward pass with numpy and registers a hand-written backward closure.
"""

from __future__ import annotations

import contextlib
from typing import Iterator, Sequence

import numpy as np

from .core import ShapeError, Tensor, as_tensor, make_result

ACTIVATIONS = ("identity", "tanh", "leaky_relu", "sigmoid")
LEAKY_SLOPE = 0.1

_faulty: set[str] = set()


@contextlib.contextmanager
def inject_fault(kernel: str) -> Iterator[None]:
    """Flip the sign of `kernel`'s input gradients inside the block (negative-control hook)."""
    _faulty.add(kernel)
    try:
        yield
    finally:
        _faulty.discard(kernel)


def _maybe_flip(name: str, grads):
    if name in _faulty:
        return tuple(None if g is None else -g for g in grads)
    return grads


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a} and {b}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")

    def bw(g):
        return _maybe_flip("add", (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")

    def bw(g):
        return _maybe_flip("sub", (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")

    def bw(g):
        return _maybe_flip("mul", (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))

    return make_result(a.data * b.data, (a, b), bw, "mul")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), bw, "reshape")


def transpose(x: Tensor, perm: Sequence[int]) -> Tensor:
    perm = tuple(perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ShapeError(f"transpose: {perm} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(perm))

    def bw(g):
        return (np.transpose(g, inverse),)

    return make_result(np.transpose(x.data, perm), (x,), bw, "transpose")


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    perm = list(range(x.ndim))
    perm[a], perm[b] = perm[b], perm[a]
    return transpose(x, perm)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: empty input list")
    ndim = xs[0].ndim
    axis = axis % ndim
    for x in xs[1:]:
        if x.ndim != ndim or any(x.shape[i] != xs[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat along axis {axis}: incompatible shapes {[t.shape for t in xs]}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def bw(g):
        parts = []
        for i in range(len(xs)):
            index = [slice(None)] * ndim
            index[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(index)])
        return _maybe_flip("concat", tuple(parts))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), bw, "concat")


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.ndim
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_result(x.data[index].copy(), (x,), bw, "slice")


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def reduce_sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return _maybe_flip("reduce_sum", (np.broadcast_to(g, x.shape).copy(),))

    return make_result(np.asarray(out), (x,), bw, "reduce_sum")


def reduce_mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return _maybe_flip("reduce_mean", (np.broadcast_to(g / count, x.shape).copy(),))

    return make_result(np.asarray(out), (x,), bw, "reduce_mean")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul batch axes")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _maybe_flip("matmul", (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)))

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def matmul_batch(a: Tensor, b: Tensor) -> Tensor:
    """Strict B x M x K @ B x K x P product (no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"matmul_batch expects 3-d operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"matmul_batch: batch sizes differ ({a.shape[0]} vs {b.shape[0]})")
    return matmul(a, b)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply y = x @ w.T + b over the last axis of `x` (w is out x in)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input last axis {x.shape[-1:]} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    k, m = w.shape[1], w.shape[0]

    def bw(g):
        g2 = g.reshape(-1, m)
        gx = g @ w.data
        gw = g2.T @ x.data.reshape(-1, k)
        gb = g2.sum(axis=0) if b is not None else None
        return _maybe_flip("linear", (gx, gw, gb))

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, bw, "linear")


def conv_channels(x: Tensor, w: Tensor, b: Tensor | None, pad: tuple[int, int] = (0, 0)) -> Tensor:
    """2-d cross-correlation with zero padding.

    x: [..., C_in, H, W], w: [C_out, C_in, kh, kw], b: [C_out].
    Output: [..., C_out, H + 2*pad_h - kh + 1, W + 2*pad_w - kw + 1].
    """
    if x.ndim < 3 or w.ndim != 4:
        raise ShapeError(f"conv_channels: need x [..., C, H, W] and w [O, C, kh, kw], got {x.shape}, {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if x.shape[-3] != c_in:
        raise ShapeError(f"conv_channels: input has {x.shape[-3]} channels, kernel expects {c_in}")
    if b is not None and b.shape != (c_out,):
        raise ShapeError(f"conv_channels: bias shape {b.shape} != ({c_out},)")
    ph, pw = pad
    if ph < 0 or pw < 0:
        raise ShapeError(f"conv_channels: negative padding {pad}")
    h, wd = x.shape[-2], x.shape[-1]
    ho, wo = h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_channels: kernel {kh}x{kw} does not fit padded input {h + 2 * ph}x{wd + 2 * pw}")

    lead = x.shape[:-3]
    xp = np.pad(x.data, [(0, 0)] * len(lead) + [(0, 0), (ph, ph), (pw, pw)])
    # columns: [..., C_in*kh*kw, Ho, Wo]
    cols = np.stack(
        [xp[..., :, i:i + ho, j:j + wo] for i in range(kh) for j in range(kw)], axis=-3
    )  # [..., C_in, kh*kw, Ho, Wo]
    k_size, pix = c_in * kh * kw, ho * wo
    cols = cols.reshape((-1, k_size, pix))  # [L, K, P] with L the flattened leading axes
    wmat = w.data.reshape(c_out, k_size)
    # plain matmuls: einsum's path search orders indices by string hash, so its
    # rounding varies between interpreter runs
    out = np.matmul(wmat, cols).reshape(lead + (c_out, ho, wo))
    if b is not None:
        out = out + b.data[:, None, None]

    def bw(g):
        g3 = g.reshape((-1, c_out, pix))
        g2 = g3.transpose(1, 0, 2).reshape(c_out, -1)
        gw = (g2 @ cols.transpose(1, 0, 2).reshape(k_size, -1).T).reshape(w.shape)
        gcols = np.matmul(wmat.T, g3).reshape(lead + (c_in, kh * kw, ho, wo))
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[..., :, i:i + ho, j:j + wo] += gcols[..., :, i * kw + j, :, :]
        gx = gxp[..., :, ph:ph + h, pw:pw + wd]
        gb = g.sum(axis=tuple(range(len(lead))) + (-2, -1)) if b is not None else None
        return _maybe_flip("conv_channels", (np.ascontiguousarray(gx), gw, gb))

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, bw, "conv_channels")


# ---------------------------------------------------------------------------
# normalizations and similarities


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return _maybe_flip("softmax_rows", (s * (g - (g * s).sum(axis=-1, keepdims=True)),))

    return make_result(s, (x,), bw, "softmax_rows")


def cosine_similarity_rows(x: Tensor, eps: float = 1e-8) -> Tensor:
    """All-pairs cosine similarity between the rows of [..., N, D] -> [..., N, N]."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim < 2:
        raise ShapeError(f"cosine_similarity_rows needs [..., N, D], got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    clipped = norms <= eps
    denom = np.where(clipped, eps, norms)
    u = x.data / denom
    out = u @ np.swapaxes(u, -1, -2)

    def bw(g):
        gu = (g + np.swapaxes(g, -1, -2)) @ u
        radial = (u * gu).sum(axis=-1, keepdims=True)
        gx = np.where(clipped, gu / eps, (gu - u * radial) / denom)
        return _maybe_flip("cosine_similarity_rows", (gx,))

    return make_result(out, (x,), bw, "cosine_similarity_rows")


def row_norm(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Euclidean norm over the last axis; the gradient uses x / max(|x|, eps)."""
    n = np.sqrt((x.data * x.data).sum(axis=-1))

    def bw(g):
        return _maybe_flip("row_norm", (g[..., None] * x.data / np.maximum(n, eps)[..., None],))

    return make_result(n, (x,), bw, "row_norm")


# ---------------------------------------------------------------------------
# activations


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "identity":
        return x
    if kind == "tanh":
        y = np.tanh(x.data)
        deriv = lambda: 1.0 - y * y  # noqa: E731
    elif kind == "leaky_relu":
        y = np.where(x.data > 0, x.data, LEAKY_SLOPE * x.data)
        deriv = lambda: np.where(x.data > 0, 1.0, LEAKY_SLOPE)  # noqa: E731
    elif kind == "sigmoid":
        y = _sigmoid(x.data)
        deriv = lambda: y * (1.0 - y)  # noqa: E731
    else:
        raise ValueError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")

    def bw(g):
        return _maybe_flip(kind, (g * deriv(),))

    return make_result(y, (x,), bw, kind)


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def moveaxis(x: Tensor, source: int, destination: int) -> Tensor:
    perm = list(range(x.ndim))
    src = source % x.ndim
    perm.pop(src)
    perm.insert(destination % x.ndim, src)
    return transpose(x, perm)
