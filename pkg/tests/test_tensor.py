import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coordmotion.tensor import (
    BackwardError,
    ComputeTape,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
    Tensor,
    activation,
    add,
    backward,
    concat,
    conv_channels,
    cosine_similarity_rows,
    grad_check,
    inject_fault,
    linear,
    matmul,
    matmul_batch,
    mul,
    no_grad,
    reduce_mean,
    reduce_sum,
    reshape,
    row_norm,
    slice_axis,
    softmax_rows,
    sub,
    transpose,
)

from oracles import conv_loop, cosine_loop, linear_loop, matmul_loop, softmax_direct


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


class TestTensor:
    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_overflow_in_kernel_is_reported(self):
        with np.errstate(over="ignore"), pytest.raises(NonFiniteError):
            mul(Tensor([1e200]), Tensor([1e200]))

    def test_grad_shape_matches_data(self):
        w = leaf(np.ones((2, 3)))
        reduce_sum(mul(w, w)).backward()
        assert w.grad.shape == w.shape

    def test_no_grad_builds_no_graph(self):
        w = leaf([1.0, 2.0])
        with no_grad():
            y = mul(w, w)
        assert not y.requires_grad


class TestConv:
    def test_scalar_affine(self):
        y = conv_channels(Tensor(np.full((1, 1, 1), 2.0)), Tensor(np.full((1, 1, 1, 1), 3.0)), Tensor([1.0]))
        assert y.data.reshape(-1).tolist() == [7.0]

    def test_identity_kernel(self, rng):
        x = rng.uniform(-1, 1, size=(3, 4, 5))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        y = conv_channels(Tensor(x), Tensor(w), Tensor(np.zeros(3)), (1, 1))
        np.testing.assert_array_equal(y.data, x)

    def test_matches_loop_oracle(self, rng):
        x = rng.uniform(-1, 1, size=(2, 3, 3))
        w = rng.uniform(-1, 1, size=(2, 2, 3, 3))
        b = rng.uniform(-1, 1, size=2)
        y = conv_channels(Tensor(x), Tensor(w), Tensor(b), (1, 1))
        assert np.abs(y.data - conv_loop(x, w, b, (1, 1))).max() <= 1e-12

    def test_leading_batch_axes(self, rng):
        x = rng.uniform(-1, 1, size=(2, 3, 2, 4, 5))
        w = rng.uniform(-1, 1, size=(4, 2, 1, 3))
        y = conv_channels(Tensor(x), Tensor(w), None, (0, 1))
        for i in range(2):
            for j in range(3):
                assert np.abs(y.data[i, j] - conv_loop(x[i, j], w, None, (0, 1))).max() <= 1e-12

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="channel"):
            conv_channels(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((1, 3, 1, 1))), None)


class TestMatmul:
    def test_identity(self, rng):
        x = rng.uniform(-1, 1, size=(2, 3, 3))
        eye = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
        np.testing.assert_array_equal(matmul_batch(Tensor(eye), Tensor(x)).data, x)

    def test_scalar(self):
        y = matmul_batch(Tensor([[[2.0]]]), Tensor([[[3.0]]]))
        assert y.data.item() == 6.0

    def test_matches_loop_oracle(self, rng):
        a = rng.uniform(-1, 1, size=(2, 3, 4))
        b = rng.uniform(-1, 1, size=(2, 4, 2))
        assert np.abs(matmul_batch(Tensor(a), Tensor(b)).data - matmul_loop(a, b)).max() <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul_batch(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((2, 3, 2))))

    def test_broadcast_gradient(self, rng):
        a = leaf(rng.uniform(-1, 1, size=(4, 2, 3)))
        b = leaf(rng.uniform(-1, 1, size=(3, 5)))
        reduce_sum(matmul(a, b)).backward()
        np.testing.assert_allclose(b.grad, a.data.sum(axis=(0, 1))[:, None] * np.ones((1, 5)), atol=1e-12)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_large_logits_stay_finite(self):
        y = softmax_rows(Tensor([[1000.0, 0.0]])).data
        assert y[0, 0] == pytest.approx(1.0) and y[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_direct_formula(self, rng):
        row = rng.uniform(-3, 3, size=5)
        assert np.abs(softmax_rows(Tensor(row[None])).data[0] - softmax_direct(row)).max() <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        assert np.abs(softmax_rows(Tensor(x)).data.sum(axis=-1) - 1.0).max() <= 1e-12


class TestCosine:
    def test_orthogonal(self):
        y = cosine_similarity_rows(Tensor([[1.0, 0.0], [0.0, 1.0]])).data
        np.testing.assert_array_equal(y, np.eye(2))

    def test_row_scaling(self, rng):
        x = rng.uniform(-1, 1, size=(4, 3))
        scaled = x.copy()
        scaled[2] *= 2.0
        a = cosine_similarity_rows(Tensor(x)).data
        assert np.abs(a - cosine_similarity_rows(Tensor(scaled)).data).max() <= 1e-12

    def test_matches_oracle(self, rng):
        x = rng.uniform(-1, 1, size=(4, 3))
        assert np.abs(cosine_similarity_rows(Tensor(x)).data - cosine_loop(x)).max() <= 1e-12

    def test_zero_row_is_finite(self):
        y = cosine_similarity_rows(Tensor([[0.0, 0.0], [1.0, 1.0]])).data
        assert np.isfinite(y).all() and y[0, 0] == 0.0

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.float64, (5, 3), elements=st.floats(-10, 10)).filter(lambda a: (np.linalg.norm(a, axis=1) > 1e-3).all()),
        arrays(np.float64, (5,), elements=st.floats(0.01, 100)),
    )
    def test_symmetric_and_scale_invariant(self, x, scale):
        c = cosine_similarity_rows(Tensor(x)).data
        assert np.abs(c - c.T).max() <= 1e-12
        assert np.abs(c - cosine_similarity_rows(Tensor(x * scale[:, None])).data).max() <= 1e-9


class TestActivation:
    def test_definitions(self):
        x = Tensor([-2.0, 0.0, 1.5])
        np.testing.assert_array_equal(activation(x, "identity").data, x.data)
        assert activation(Tensor([0.0]), "sigmoid").data[0] == 0.5
        assert activation(Tensor([-2.0]), "leaky_relu").data[0] == pytest.approx(-0.2, abs=1e-15)
        assert activation(Tensor([0.3]), "tanh").data[0] == np.tanh(0.3)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="activation"):
            activation(Tensor([1.0]), "relu6")


class TestShapeOps:
    def test_mean_of_constant(self):
        assert reduce_mean(Tensor(np.full((3, 4, 2), 1.25)), axes=(0, 1)).data.tolist() == [1.25, 1.25]

    def test_transpose_round_trip(self, rng):
        x = rng.uniform(size=(2, 3, 4))
        perm = (2, 0, 1)
        inv = tuple(np.argsort(perm))
        np.testing.assert_array_equal(transpose(transpose(Tensor(x), perm), inv).data, x)

    def test_broadcast_subtract_oracle(self, rng):
        x = rng.uniform(-1, 1, size=(4, 3, 5))
        ca = rng.uniform(-1, 1, size=(1, 3, 5))
        y = sub(Tensor(x), Tensor(ca)).data
        ref = np.zeros_like(x)
        for n in range(4):
            for d in range(3):
                for t in range(5):
                    ref[n, d, t] = x[n, d, t] - ca[0, d, t]
        assert np.abs(y - ref).max() <= 1e-12

    def test_incompatible_broadcast(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_concat_and_slice(self, rng):
        a, b = rng.uniform(size=(2, 3)), rng.uniform(size=(2, 1))
        c = concat([Tensor(a), Tensor(b)], axis=-1)
        np.testing.assert_array_equal(slice_axis(c, -1, 3, 4).data, b)

    def test_reshape_size_mismatch(self):
        with pytest.raises(ShapeError):
            reshape(Tensor(np.zeros(6)), (4, 2))

    def test_linear_matches_oracle(self, rng):
        x, w, b = rng.uniform(-1, 1, (2, 3, 4)), rng.uniform(-1, 1, (5, 4)), rng.uniform(-1, 1, 5)
        assert np.abs(linear(Tensor(x), Tensor(w), Tensor(b)).data - linear_loop(x, w, b)).max() <= 1e-12


class TestBackward:
    def test_linear_case(self, rng):
        x = rng.uniform(size=4)
        w = leaf(np.ones(4))
        backward(reduce_sum(mul(w, Tensor(x))))
        np.testing.assert_array_equal(w.grad, x)

    def test_square(self):
        w = leaf([1.0, 2.0])
        backward(reduce_sum(mul(w, w)))
        np.testing.assert_array_equal(w.grad, [2.0, 4.0])

    def test_shared_node_accumulates(self):
        w = leaf([3.0])
        y = add(w, w)
        backward(reduce_sum(mul(y, y)))
        assert w.grad.tolist() == [24.0]

    def test_non_scalar(self):
        with pytest.raises(BackwardError, match="scalar"):
            backward(mul(leaf([1.0, 2.0]), 2.0))

    def test_detached(self):
        with pytest.raises(BackwardError, match="detached"):
            backward(reduce_sum(Tensor([1.0, 2.0])))
        w = leaf([1.0])
        with pytest.raises(BackwardError):
            backward(reduce_sum(w.detach()))

    def test_second_backward_rejected(self):
        w = leaf([1.0, 2.0])
        loss = reduce_sum(mul(w, w))
        loss.backward()
        with pytest.raises(BackwardError, match="consumed"):
            loss.backward()

    def test_tape_visits_each_node_once_in_topological_order(self):
        w = leaf([1.0, 2.0])
        a = mul(w, w)
        b = add(a, w)
        c = mul(a, b)
        root = reduce_sum(c)
        tape = ComputeTape.from_output(root)
        ids = [id(n) for n in tape.nodes]
        assert len(ids) == len(set(ids)) == 5
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                assert pos[id(parent)] < pos[id(node)]

    def test_row_norm_gradient_at_zero_is_finite(self):
        x = leaf(np.zeros((2, 3)))
        backward(reduce_sum(row_norm(x)))
        np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))


class TestGradCheck:
    def test_quadratic_is_tight(self, rng):
        w = leaf(rng.uniform(-2, 2, size=5))
        report = grad_check(lambda: reduce_sum(mul(w, w)), {"w": w}, h=1e-5)
        assert report.max_rel_error <= 1e-7

    def test_wrong_backward_fails(self, rng):
        w = leaf(rng.uniform(-1, 1, size=(2, 3)))
        x = Tensor(rng.uniform(-1, 1, size=(3, 4)))
        with inject_fault("matmul"):
            report = grad_check(lambda: reduce_sum(matmul(w, x)), {"w": w})
        assert not report.passed
        assert "FAIL" in report.lines()[0]

    def test_non_deterministic_detected(self):
        w = leaf([1.0])
        calls = iter(range(100))

        def f():
            return reduce_sum(mul(w, float(next(calls))))

        with pytest.raises(NonDeterministicError):
            grad_check(f, {"w": w})

    def test_reports_every_tensor(self, rng):
        a, b = leaf(rng.uniform(size=3)), leaf(rng.uniform(size=3))
        report = grad_check(lambda: reduce_sum(mul(a, b)), {"a": a, "b": b})
        assert set(report.per_param) == {"a", "b"} and report.passed
