import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcm import tensor as T
from mcm.errors import ContractError
from mcm.points import PointCloud
from mcm.tensor import Parameter, Tensor
from mcm.training import (AugmentationConfig, OptimizerState, augment_sample,
                          mean_keypoint_error, smooth_l1, total_loss)


class TestSmoothL1:
    @pytest.mark.parametrize("x,expected", [
        (0.0, 0.0),
        (0.005, 0.0025),
        (-0.005, 0.0025),
        (0.1, 0.095),
        (-0.1, 0.095),
    ])
    def test_exact_values(self, x, expected):
        assert smooth_l1(Tensor(x)).item() == pytest.approx(expected, abs=1e-18)

    def test_continuous_at_knee(self):
        below = 0.5 * 0.01
        above = 0.01 - 0.005
        assert below == above == 0.005
        assert smooth_l1(Tensor(0.01)).item() == pytest.approx(0.005, abs=1e-18)

    @settings(max_examples=200, derandomize=True)
    @given(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False))
    def test_even_nonnegative_zero_only_at_zero(self, x):
        v = smooth_l1(Tensor(x)).item()
        v_neg = smooth_l1(Tensor(-x)).item()
        assert v == v_neg
        assert v >= 0.0
        assert (v == 0.0) == (x == 0.0)

    @settings(max_examples=100, derandomize=True)
    @given(st.floats(min_value=-0.05, max_value=0.05, allow_nan=False))
    def test_continuity(self, x):
        h = 1e-9
        a = smooth_l1(Tensor(x)).item()
        b = smooth_l1(Tensor(x + h)).item()
        assert abs(a - b) <= 1.1 * h

    def test_gradient_away_from_kinks(self):
        x = Tensor(np.array([0.003, -0.004, 0.05, -0.2]), requires_grad=True)
        err = T.finite_diff_check(lambda: T.tsum(smooth_l1(x)), [x])
        assert err < 1e-9


class TestTotalLoss:
    def test_perfect_prediction_zero(self):
        gt = np.random.default_rng(0).normal(size=(5, 3))
        loss = total_loss([Tensor(gt.copy()) for _ in range(3)], Tensor(gt))
        assert loss.item() == 0.0

    def test_single_coordinate_residual(self):
        gt = np.zeros((1, 3))
        pred = np.array([[0.005, 0.0, 0.0]])
        loss = total_loss([Tensor(pred)], Tensor(gt))
        assert loss.item() == pytest.approx(0.0025, abs=1e-18)

    def test_identical_stages_scale_linearly(self):
        rng = np.random.default_rng(1)
        gt, pred = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        one = total_loss([Tensor(pred)], Tensor(gt)).item()
        four = total_loss([Tensor(pred)] * 4, Tensor(gt)).item()
        assert four == pytest.approx(4.0 * one, rel=1e-15)

    def test_stage_additivity(self):
        rng = np.random.default_rng(2)
        gt = rng.normal(size=(4, 3))
        stages = [Tensor(rng.normal(size=(4, 3))) for _ in range(3)]
        whole = total_loss(stages, Tensor(gt)).item()
        parts = sum(total_loss([s], Tensor(gt)).item() for s in stages)
        assert whole == pytest.approx(parts, rel=1e-12)

    def test_stage_count_contract(self):
        gt = Tensor(np.zeros((2, 3)))
        with pytest.raises(ContractError):
            total_loss([gt, gt], gt, expected_stages=4)

    def test_per_joint_norm_variant_runs(self):
        rng = np.random.default_rng(3)
        gt, pred = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        a = total_loss([Tensor(pred)], Tensor(gt), per_joint_norm=False).item()
        b = total_loss([Tensor(pred)], Tensor(gt), per_joint_norm=True).item()
        assert a != b and np.isfinite(b)


class TestOptimizer:
    def test_zero_gradient_zero_decay_leaves_params(self):
        p = Parameter("w", (3, 3), "normal:1.0", seed=0)
        before = p.value.data.copy()
        opt = OptimizerState([p], weight_decay=0.0)
        opt.zero_grad()
        opt.step()
        np.testing.assert_array_equal(p.value.data, before)

    def test_missing_grad_skipped_with_flag(self):
        p = Parameter("w", (2,), "ones", seed=0)
        p.value.grad = None
        opt = OptimizerState([p])
        opt.step()
        assert opt.skipped == ["w"]
        np.testing.assert_array_equal(p.value.data, np.ones(2))

    def test_quadratic_bowl_converges(self):
        p = Parameter("theta", (1,), "constant:0.1", seed=0)
        opt = OptimizerState([p], lr=0.001, weight_decay=0.0)
        trace = []
        for _ in range(200):
            opt.zero_grad()
            loss = T.mul(p.value, p.value).sum()
            loss.backward()
            opt.step()
            trace.append(abs(float(p.value.data[0])))
        assert trace[-1] < 1e-2
        # monotone decrease after warm-up until the bowl floor is reached
        warm = trace[5:]
        below = next(i for i, v in enumerate(warm) if v < 1e-2)
        assert all(b <= a + 1e-12 for a, b in zip(warm[:below], warm[1:below + 1]))

    def test_deterministic_trajectories(self):
        def run():
            p = Parameter("w", (4,), "normal:1.0", seed=3)
            opt = OptimizerState([p], lr=0.01)
            for _ in range(20):
                opt.zero_grad()
                T.tsum(T.mul(p.value, p.value)).backward()
                opt.step()
            return p.value.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_decoupled_weight_decay_shrinks_without_grad_signal(self):
        p = Parameter("w", (2,), "constant:2.0", seed=0)
        opt = OptimizerState([p], lr=0.1, weight_decay=0.5)
        opt.zero_grad()
        opt.step()
        np.testing.assert_allclose(p.value.data, np.full(2, 2.0 * 0.95))

    def test_lr_step_decay(self):
        opt = OptimizerState([Parameter("w", (1,), "ones", 0)], lr=0.02)
        opt.decay_lr(0.1)
        assert opt.lr == pytest.approx(0.002)


class TestAugmentation:
    def make_inputs(self, seed=0):
        rng = np.random.default_rng(seed)
        cloud = PointCloud(rng.normal(size=(30, 3)) * 0.05 + [0, 0, 0.4])
        joints = rng.normal(size=(21, 3)) * 0.05 + [0, 0, 0.4]
        return cloud, joints

    def test_identity_draw_is_identity(self):
        cloud, joints = self.make_inputs(1)
        cfg = AugmentationConfig(rotation_deg=(0, 0), scale=(1, 1),
                                 translation_mm=(0, 0))
        out_cloud, out_joints = augment_sample(cloud, joints, cfg,
                                               np.random.default_rng(0))
        np.testing.assert_allclose(out_cloud.coords, cloud.coords, atol=1e-12)
        np.testing.assert_allclose(out_joints, joints, atol=1e-12)

    def test_similarity_preserves_scaled_distances(self):
        cloud, joints = self.make_inputs(2)
        cfg = AugmentationConfig()
        rng = np.random.default_rng(5)
        out_cloud, out_joints = augment_sample(cloud, joints, cfg, rng)
        d_before = np.linalg.norm(cloud.coords[:, None] - joints[None, :], axis=2)
        d_after = np.linalg.norm(out_cloud.coords[:, None] - out_joints[None, :],
                                 axis=2)
        scale = d_after / d_before
        assert np.allclose(scale, scale.flat[0], rtol=1e-9)
        assert 0.9 - 1e-9 <= scale.flat[0] <= 1.1 + 1e-9

    def test_pure_isometry_when_scale_fixed(self):
        cloud, joints = self.make_inputs(3)
        cfg = AugmentationConfig(scale=(1.0, 1.0))
        out_cloud, out_joints = augment_sample(cloud, joints, cfg,
                                               np.random.default_rng(6))
        d_before = np.linalg.norm(cloud.coords[0] - joints[4])
        d_after = np.linalg.norm(out_cloud.coords[0] - out_joints[4])
        assert d_after == pytest.approx(d_before, rel=1e-12)

    def test_seed_reproducible(self):
        cloud, joints = self.make_inputs(4)
        cfg = AugmentationConfig()
        a = augment_sample(cloud, joints, cfg, np.random.default_rng(9))
        b = augment_sample(cloud, joints, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(a[0].coords, b[0].coords)
        np.testing.assert_array_equal(a[1], b[1])

    def test_malformed_range_rejected(self):
        with pytest.raises(ContractError):
            AugmentationConfig(scale=(1.2, 0.9))


class TestMeanKeypointError:
    def test_perfect(self):
        gt = np.random.default_rng(0).normal(size=(3, 21, 3))
        report = mean_keypoint_error(gt, gt)
        assert report.mean_error_mm == 0.0
        assert report.sample_count == 3

    def test_uniform_offset(self):
        gt = np.random.default_rng(1).normal(size=(4, 5, 3))
        pred = gt + np.array([3.0, 0.0, 0.0])
        report = mean_keypoint_error(pred, gt)
        assert report.mean_error_mm == pytest.approx(3.0, rel=1e-12)
        np.testing.assert_allclose(report.per_joint_mm, np.full(5, 3.0))

    def test_matches_direct_enumeration(self):
        rng = np.random.default_rng(2)
        pred, gt = rng.normal(size=(2, 3, 3)), rng.normal(size=(2, 3, 3))
        report = mean_keypoint_error(pred, gt)
        manual = np.mean([np.linalg.norm(pred[s, j] - gt[s, j])
                          for s in range(2) for j in range(3)])
        assert report.mean_error_mm == pytest.approx(manual, rel=1e-12)

    def test_joint_permutation_invariance_of_mean(self):
        rng = np.random.default_rng(3)
        pred, gt = rng.normal(size=(2, 6, 3)), rng.normal(size=(2, 6, 3))
        perm = rng.permutation(6)
        a = mean_keypoint_error(pred, gt).mean_error_mm
        b = mean_keypoint_error(pred[:, perm], gt[:, perm]).mean_error_mm
        assert a == pytest.approx(b, rel=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            mean_keypoint_error(np.zeros((2, 5, 3)), np.zeros((2, 4, 3)))
