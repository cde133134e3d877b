import numpy as np
import pytest

from mcm import tensor as T
from mcm.encoder import SuperPointSet
from mcm.tensor import Tensor, finite_diff_check
from mcm.tokens import BILLayer, GlobalEncoder, TokenInitializer, bil_stack


def make_superpoints(seed=0, m=24, feat_dim=6):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(m, 3))
    return SuperPointSet(coords=coords, cam_coords=coords * 0.1 + [0, 0, 0.4],
                         feats=Tensor(rng.normal(size=(m, feat_dim))),
                         c_geo=feat_dim, c_depth=0, c_rgb=0)


class TestBIL:
    def test_zero_weight_outputs_biases(self):
        layer = BILLayer("bil", in_dim=4, out_dim=3, num_joints=5, seed=0)
        layer.weight.value.data[:] = 0.0
        h = Tensor(np.random.default_rng(1).normal(size=(5, 4)))
        out = layer(h).data
        np.testing.assert_array_equal(out, layer.biases.value.data)
        # identical inputs still give distinct rows: that is the point of BIL
        assert np.unique(out, axis=0).shape[0] == 5

    def test_zero_biases_is_plain_linear(self):
        layer = BILLayer("bil", in_dim=4, out_dim=3, num_joints=2, seed=1)
        layer.biases.value.data[:] = 0.0
        h = np.random.default_rng(2).normal(size=(2, 4))
        np.testing.assert_allclose(layer(Tensor(h)).data,
                                   h @ layer.weight.value.data, rtol=1e-12)

    def test_gradient(self):
        layer = BILLayer("bil", in_dim=4, out_dim=3, num_joints=3, seed=2)
        h = Tensor(np.random.default_rng(3).normal(size=(3, 4)), requires_grad=True)
        err = finite_diff_check(lambda: T.tsum(layer(h)),
                                layer.parameters() + [h])
        assert err < 1e-8

    def test_stack_applies_nonlinearity_between_not_after(self):
        layers = [BILLayer(f"b{i}", 2, 2, 1, seed=i) for i in range(2)]
        for lay in layers:
            lay.weight.value.data[:] = np.eye(2)
            lay.biases.value.data[:] = 0.0
        h = Tensor(np.array([[-1.0, 1.0]]))
        out = bil_stack(layers, h).data
        # between-layer leaky halves... scales negative lane by 0.01 once only
        np.testing.assert_allclose(out, [[-0.01, 1.0]])


class TestGlobalEncoder:
    def test_permutation_invariance(self):
        enc = GlobalEncoder("g", feat_dim=6, mid_width=8, out_width=10, k=6, seed=0)
        sp = make_superpoints(4)
        base = enc(sp).data
        perm = np.random.default_rng(5).permutation(len(sp))
        sp_perm = SuperPointSet(coords=sp.coords[perm],
                                cam_coords=sp.cam_coords[perm],
                                feats=Tensor(sp.feats.data[perm]),
                                c_geo=sp.c_geo, c_depth=0, c_rgb=0)
        np.testing.assert_allclose(enc(sp_perm).data, base, atol=1e-12)

    def test_translation_invariance(self):
        enc = GlobalEncoder("g", feat_dim=6, mid_width=8, out_width=10, k=6, seed=1)
        sp = make_superpoints(6)
        shifted = SuperPointSet(coords=sp.coords + [1.0, -2.0, 0.5],
                                cam_coords=sp.cam_coords, feats=sp.feats,
                                c_geo=sp.c_geo, c_depth=0, c_rgb=0)
        np.testing.assert_allclose(enc(shifted).data, enc(sp).data, atol=1e-12)

    def test_configured_output_shape(self):
        enc = GlobalEncoder("g", feat_dim=6, mid_width=16, out_width=512, seed=2)
        assert enc(make_superpoints(7)).shape == (512,)

    def test_gradient_through_both_stages(self):
        enc = GlobalEncoder("g", feat_dim=4, mid_width=5, out_width=6, k=4, seed=3)
        sp = make_superpoints(8, m=10, feat_dim=4)
        sp.feats.requires_grad = True
        sp.feats.zero_grad()
        err = finite_diff_check(lambda: T.tsum(enc(sp)),
                                enc.parameters() + [sp.feats])
        assert err < 1e-5


class TestTokenInitializer:
    def test_zero_global_vector_rows_follow_biases(self):
        init = TokenInitializer("init", global_dim=6, bil_widths=(5, 4, 3),
                                num_joints=4, seed=0)
        state = init(Tensor(np.zeros(6)))
        assert np.unique(state.tokens.data, axis=0).shape[0] == 4
        # zeroing every bias table collapses all rows to the same token
        for bil in init.bils:
            bil.biases.value.data[:] = 0.0
        collapsed = init(Tensor(np.zeros(6)))
        assert np.unique(collapsed.tokens.data, axis=0).shape[0] == 1

    def test_different_inputs_differ_everywhere(self):
        init = TokenInitializer("init", global_dim=6, bil_widths=(8, 8, 8),
                                num_joints=5, seed=1)
        rng = np.random.default_rng(9)
        a = init(Tensor(rng.normal(size=6))).tokens.data
        b = init(Tensor(rng.normal(size=6))).tokens.data
        assert np.all(np.any(a != b, axis=1))

    def test_output_shapes(self):
        init = TokenInitializer("init", global_dim=12, bil_widths=(10, 8, 7),
                                num_joints=21, seed=2)
        state = init(Tensor(np.random.default_rng(10).normal(size=12)))
        assert state.tokens.shape == (21, 7)
        assert state.positions.shape == (21, 3)
        assert state.stage == 0

    def test_row_identity_is_stable_across_runs(self):
        args = dict(global_dim=5, bil_widths=(4, 4, 4), num_joints=6, seed=3)
        g = np.random.default_rng(11).normal(size=5)
        a = TokenInitializer("init", **args)(Tensor(g))
        b = TokenInitializer("init", **args)(Tensor(g))
        np.testing.assert_array_equal(a.tokens.data, b.tokens.data)
        np.testing.assert_array_equal(a.positions.data, b.positions.data)

    def test_gradient(self):
        init = TokenInitializer("init", global_dim=4, bil_widths=(4, 3, 3),
                                num_joints=3, seed=4)
        g = Tensor(np.random.default_rng(12).normal(size=4), requires_grad=True)
        err = finite_diff_check(lambda: T.tsum(init(g).positions),
                                init.parameters() + [g])
        assert err < 1e-6
