import numpy as np
import pytest

from mcm.errors import ContractError
from mcm.model import ModelConfig, PoseModel, ablation_config, normalize_targets
from mcm.points import denormalize
from mcm.synth import SyntheticHandConfig, generate_synthetic

SMALL = ModelConfig(num_joints=21, token_dim=16, global_dim=32, global_mid=24,
                    bil_hidden=(32, 24), num_points=96, num_superpoints=24,
                    knn_k=8, k_local=6, point_widths=(12, 12), image_size=32,
                    depth_widths=(3, 4, 4), rgb_widths=(3, 4, 4), state_dim=4,
                    stacks=2, seed=0)


@pytest.fixture(scope="module")
def sample():
    return generate_synthetic(SyntheticHandConfig(seed=21, image_size=32), 1)[0]


class TestForward:
    def test_stage_count_and_shapes(self, sample):
        model = PoseModel(SMALL)
        result = model.forward_sample(sample, point_seed=5)
        assert len(result.stages) == SMALL.stacks + 1
        for state in result.stages:
            assert state.positions.shape == (21, 3)
            assert state.tokens.shape == (21, SMALL.token_dim)
        assert [s.stage for s in result.stages] == [0, 1, 2]

    def test_deterministic_across_fresh_models(self, sample):
        a = PoseModel(SMALL).forward_sample(sample, point_seed=5)
        b = PoseModel(SMALL).forward_sample(sample, point_seed=5)
        for sa, sb in zip(a.stages, b.stages):
            np.testing.assert_array_equal(sa.positions.data, sb.positions.data)
            np.testing.assert_array_equal(sa.tokens.data, sb.tokens.data)

    def test_seed_changes_output(self, sample):
        from dataclasses import replace
        a = PoseModel(SMALL).forward_sample(sample, point_seed=5)
        b = PoseModel(replace(SMALL, seed=1)).forward_sample(sample, point_seed=5)
        assert np.any(a.stages[-1].positions.data != b.stages[-1].positions.data)

    def test_positions_mm_denormalizes(self, sample):
        model = PoseModel(SMALL)
        result = model.forward_sample(sample, point_seed=5)
        mm = result.positions_mm()
        manual = denormalize(result.stages[-1].positions.data,
                             result.centroid) * 1000.0
        np.testing.assert_array_equal(mm, manual)

    def test_normalize_targets_round_trip(self, sample):
        model = PoseModel(SMALL)
        result = model.forward_sample(sample, point_seed=5)
        gt_n = normalize_targets(sample.gt_joints, result.centroid)
        back = denormalize(gt_n, result.centroid)
        np.testing.assert_allclose(back, sample.gt_joints, atol=1e-12)

    def test_depth_only_mode(self, sample):
        from dataclasses import replace
        model = PoseModel(replace(SMALL, use_rgb=False))
        result = model.forward_sample(sample, point_seed=5)
        assert np.all(np.isfinite(result.stages[-1].positions.data))
        assert result.superpoints.feature_block("rgb").shape == (24, 4)
        np.testing.assert_array_equal(result.superpoints.feature_block("rgb"),
                                      np.zeros((24, 4)))

    def test_gates_collected_per_block(self, sample):
        model = PoseModel(SMALL)
        result = model.forward_sample(sample, point_seed=5)
        assert len(result.gates) == SMALL.stacks
        for gate in result.gates:
            assert np.all((gate.data > 0) & (gate.data < 1))

    def test_timing_collection(self, sample):
        result = PoseModel(SMALL).forward_sample(sample, point_seed=5,
                                                 collect_timings=True)
        keys = set(result.timings_ms)
        assert {"encode_3d", "encode_2d_fuse", "tokens", "block0", "block1"} <= keys


class TestAblationPresets:
    def test_presets_differ(self, sample):
        outs = {}
        for variant in ("baseline", "corr_only", "full"):
            model = PoseModel(ablation_config(SMALL, variant))
            outs[variant] = model.forward_sample(sample, point_seed=5)\
                .stages[-1].positions.data
        assert np.any(outs["baseline"] != outs["corr_only"])
        assert np.any(outs["corr_only"] != outs["full"])

    def test_unknown_preset(self):
        with pytest.raises(ContractError):
            ablation_config(SMALL, "transformer")

    def test_parameter_names_unique(self):
        model = PoseModel(SMALL)
        names = [p.name for p in model.parameters()]
        assert len(names) == len(set(names))

    def test_shared_coord_head_is_single_parameter(self):
        model = PoseModel(SMALL)
        names = [p.name for p in model.parameters() if "coord_proj" in p.name]
        assert names == ["coord_proj"]

    def test_unshared_coord_heads(self):
        from dataclasses import replace
        model = PoseModel(replace(SMALL, share_coord_head=False))
        names = sorted(p.name for p in model.parameters() if "coord_proj" in p.name)
        assert names == ["block0.coord_proj", "block1.coord_proj"]
