import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordmotion import gce
from coordmotion.tensor import Tensor, no_grad

from helpers import const, randomize, scoped
from oracles import ca_weighted_sum, cosine_loop, gce_loop, softmax_direct


def make(n, t, seed=0):
    return scoped(gce.init_gce, n, t, seed=seed)


class TestCoordinationAttractor:
    def test_average_of_two_joints(self):
        params, _ = make(2, 3)
        params["ca.weight"].data[...] = 0.5
        params["ca.bias"].data[...] = 0.0
        x = np.empty((2, 4, 3))
        x[0], x[1] = 2.0, 4.0
        ca = gce.coordination_attractor(const(x), params, "identity").data
        assert ca.shape == (1, 4, 3) and (ca == 3.0).all()

    def test_zero_input_tanh(self):
        params, _ = make(3, 2)
        params["ca.bias"].data[...] = 0.0
        assert not gce.coordination_attractor(const(np.zeros((3, 2, 2))), params, "tanh").data.any()

    @pytest.mark.parametrize("kind", ["identity", "tanh", "leaky_relu"])
    def test_conv_form_equals_weighted_sum(self, rng, kind):
        params, raw = make(5, 6)
        x = rng.uniform(-1, 1, size=(5, 4, 6))
        ca = gce.coordination_attractor(const(x), params, kind).data
        ref = ca_weighted_sum(x, raw["ca.weight"][0, :, 0, 0], float(raw["ca.bias"][0]), kind)
        assert np.abs(ca - ref).max() <= 1e-12


class TestFeatureNormalize:
    def test_equal_to_attractor_gives_zero(self, rng):
        ca = rng.uniform(size=(1, 3, 4))
        assert not gce.feature_normalize(const(np.repeat(ca, 5, axis=0)), const(ca)).data.any()

    def test_zero_attractor(self, rng):
        x = rng.uniform(size=(5, 3, 4))
        np.testing.assert_array_equal(gce.feature_normalize(const(x), const(np.zeros((1, 3, 4)))).data, x)

    def test_translation_trend_removed(self, rng):
        params, _ = make(5, 6)
        w = rng.uniform(0.1, 1.0, size=5)
        params["ca.weight"].data[0, :, 0, 0] = w / w.sum()
        params["ca.bias"].data[...] = 0.0
        x = rng.uniform(-1, 1, size=(5, 4, 6))
        shifted = x + rng.uniform(-3, 3)

        def xr(a):
            return gce.feature_normalize(const(a), gce.coordination_attractor(const(a), params, "identity")).data

        assert np.abs(xr(x) - xr(shifted)).max() <= 1e-12


class TestRelationGraphs:
    def test_identical_joints_give_all_ones(self, rng):
        emb = np.repeat(rng.uniform(0.5, 1.0, size=(1, 3, 4)), 5, axis=0)
        graphs = gce.similarity_graphs(const(emb)).data
        assert graphs.shape == (4, 5, 5)
        np.testing.assert_allclose(graphs, 1.0, atol=1e-15)

    def test_orthogonal_rows(self):
        emb = np.zeros((2, 2, 1))
        emb[0, 0, 0] = emb[1, 1, 0] = 1.0
        np.testing.assert_array_equal(gce.similarity_graphs(const(emb)).data[0], np.eye(2))

    @pytest.mark.parametrize("similarity", gce.SIMILARITIES)
    def test_matches_pairwise_oracle(self, rng, similarity):
        params, raw = make(4, 5)
        xr = rng.uniform(-1, 1, size=(4, 3, 5))
        graphs = gce.relation_graphs(const(xr), params, "tanh", similarity).data
        emb = np.tanh(np.einsum("ndt,st->nds", xr, raw["emb.weight"]) + raw["emb.bias"])
        for c in range(5):
            rows = emb[:, :, c]
            ref = cosine_loop(rows) if similarity == "cosine" else np.stack([softmax_direct(r) for r in rows @ rows.T])
            assert np.abs(graphs[c] - ref).max() <= 1e-12

    def test_single_graph_mode(self, rng):
        emb = rng.uniform(-1, 1, size=(2, 4, 3, 5))
        graphs = gce.similarity_graphs(const(emb), multi_graph=False).data
        assert graphs.shape == (2, 1, 4, 4)
        np.testing.assert_allclose(graphs[1, 0], cosine_loop(emb[1].mean(axis=-1)), atol=1e-12)

    def test_unknown_similarity(self, rng):
        with pytest.raises(ValueError, match="similarity"):
            gce.similarity_graphs(const(rng.uniform(size=(3, 2, 2))), "euclid")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariants_hold_on_every_forward(self, seed):
        rng = np.random.default_rng(seed)
        params, _ = make(5, 6, seed=seed % 97)
        x = rng.uniform(-2, 2, size=(5, 4, 6))
        _, graphs = gce.gce_forward(const(x), params, "leaky_relu", return_graphs=True)
        c = graphs.data
        assert np.abs(c - np.swapaxes(c, -1, -2)).max() <= 1e-12
        assert c.min() >= -1 - 1e-9 and c.max() <= 1 + 1e-9
        np.testing.assert_allclose(np.diagonal(c, axis1=-2, axis2=-1), 1.0, atol=1e-12)

    def test_positive_row_scaling(self, rng):
        emb = rng.uniform(-1, 1, size=(5, 4, 6))
        scale = rng.uniform(0.01, 100.0, size=(5, 1, 1))
        a = gce.similarity_graphs(const(emb)).data
        assert np.abs(a - gce.similarity_graphs(const(emb * scale)).data).max() <= 1e-9


class TestForward:
    def test_identity_graph_gives_intra_features(self, rng, monkeypatch):
        params, _ = make(4, 5)
        x = const(rng.uniform(-1, 1, size=(4, 3, 5)))
        eye = Tensor(np.broadcast_to(np.eye(4), (5, 4, 4)).copy())
        monkeypatch.setattr(gce, "relation_graphs", lambda *a, **k: eye)
        z = gce.intra_features(x, params, "tanh").data
        np.testing.assert_array_equal(gce.gce_forward(x, params, "tanh").data, np.moveaxis(z, 0, -1))

    def test_single_joint(self, rng):
        params, _ = make(1, 3)
        x = const(rng.uniform(0.2, 1.0, size=(1, 2, 3)))
        z = gce.intra_features(x, params, "tanh").data
        f_ca, graphs = gce.gce_forward(x, params, "tanh", use_relative_joints=False, return_graphs=True)
        np.testing.assert_allclose(graphs.data, 1.0, atol=1e-15)
        np.testing.assert_allclose(f_ca.data, np.moveaxis(z, 0, -1), atol=1e-15)

    def test_intra_features_do_not_mix_joints(self, rng):
        params, _ = make(4, 5)
        x = rng.uniform(-1, 1, size=(4, 3, 5))
        bumped = x.copy()
        bumped[2] += 1.0
        a = gce.intra_features(const(x), params, "tanh").data
        b = gce.intra_features(const(bumped), params, "tanh").data
        changed = np.abs(a - b).max(axis=(0, 2)) > 0
        assert changed.tolist() == [False, False, True, False]

    @pytest.mark.parametrize("flags", [
        dict(),
        dict(use_relative_joints=False),
        dict(multi_graph=False),
        dict(similarity="softmax_dot"),
    ])
    @pytest.mark.parametrize("kind", ["tanh", "leaky_relu"])
    def test_matches_full_oracle(self, rng, flags, kind):
        params, raw = make(3, 2)
        randomize(params, rng)
        x = rng.uniform(-1, 1, size=(3, 2, 2))
        out = gce.gce_forward(const(x), params, kind, **flags).data
        assert np.abs(out - gce_loop(x, raw | {k: v.data for k, v in params.items()}, kind, **flags)).max() <= 1e-12

    def test_batched_equals_unbatched(self, rng):
        params, _ = make(4, 5)
        x = rng.uniform(-1, 1, size=(3, 4, 2, 5))
        with no_grad():
            batched = gce.gce_forward(const(x), params).data
            for i in range(3):
                assert np.abs(batched[i] - gce.gce_forward(const(x[i]), params).data).max() <= 1e-12
