import numpy as np
import pytest

from mcm.errors import ContractError
from mcm.synth import (FINGERS, JOINT_NAMES, SyntheticHandConfig,
                       generate_synthetic, hand_forward_kinematics, _BASES_MM,
                       _REST_YAW_DEG)


def test_joint_layout():
    assert len(JOINT_NAMES) == 21
    assert JOINT_NAMES[0] == "wrist"
    assert JOINT_NAMES[1] == "thumb_mcp"
    assert JOINT_NAMES[-1] == "pinky_tip"


class TestForwardKinematics:
    def test_flat_hand_matches_closed_form(self):
        cfg = SyntheticHandConfig()
        angles = {f: (0.0, 0.0, 0.0, 0.0) for f in FINGERS}
        joints = hand_forward_kinematics(cfg, angles)
        np.testing.assert_array_equal(joints[0], np.zeros(3))
        for fi, finger in enumerate(FINGERS):
            yaw = np.deg2rad(_REST_YAW_DEG[finger])
            direction = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
            base = np.array([*_BASES_MM[finger], 0.0]) / 1000.0
            lengths = cfg.bone_lengths_mm[finger]
            cum = 0.0
            for seg in range(3):
                cum += lengths[seg] / 1000.0
                expected = base + cum * direction
                got = joints[1 + fi * 4 + seg + 1]
                np.testing.assert_allclose(got, expected, atol=1e-12)
        # a flat hand lies in the palm plane
        np.testing.assert_allclose(joints[:, 2], np.zeros(21), atol=1e-15)

    def test_full_flexion_curls_toward_palm(self):
        cfg = SyntheticHandConfig()
        angles = {f: (0.0, 80.0, 80.0, 60.0) for f in FINGERS}
        joints = hand_forward_kinematics(cfg, angles)
        tips = joints[4::4]
        assert np.all(tips[:, 2] < 0)  # flexion bends out of plane toward -z

    def test_bone_lengths_preserved_under_articulation(self):
        cfg = SyntheticHandConfig()
        rng = np.random.default_rng(0)
        angles = {f: tuple(rng.uniform(-20, 70, 4)) for f in FINGERS}
        joints = hand_forward_kinematics(cfg, angles)
        for fi, finger in enumerate(FINGERS):
            base = 1 + fi * 4
            for seg in range(3):
                got = np.linalg.norm(joints[base + seg + 1] - joints[base + seg])
                assert got * 1000 == pytest.approx(
                    cfg.bone_lengths_mm[finger][seg], rel=1e-12)


class TestGeneration:
    def test_seed_determinism_bit_identical(self):
        cfg = SyntheticHandConfig(seed=11)
        a = generate_synthetic(cfg, 2)
        b = generate_synthetic(cfg, 2)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.depth, sb.depth)
            np.testing.assert_array_equal(sa.rgb, sb.rgb)
            np.testing.assert_array_equal(sa.gt_joints, sb.gt_joints)

    def test_joints_inside_frustum_with_positive_depth(self):
        cfg = SyntheticHandConfig(seed=12)
        for s in generate_synthetic(cfg, 5):
            intr = s.intrinsics
            z = s.gt_joints[:, 2]
            assert np.all(z > 0)
            u = s.gt_joints[:, 0] * intr.fx / z + intr.cx
            v = s.gt_joints[:, 1] * intr.fy / z + intr.cy
            assert np.all((u >= 0) & (u < cfg.image_size))
            assert np.all((v >= 0) & (v < cfg.image_size))
            assert np.all(s.depth >= 0)

    def test_every_joint_near_generated_skin(self):
        # nearest-point audit against the sampled hand surface (10 mm bound)
        cfg = SyntheticHandConfig(seed=13)
        samples, surfaces = generate_synthetic(cfg, 5, return_surfaces=True)
        for s, surf in zip(samples, surfaces):
            for joint in s.gt_joints:
                assert np.linalg.norm(surf - joint, axis=1).min() < 0.010

    def test_occluder_adds_closer_geometry(self):
        base = generate_synthetic(SyntheticHandConfig(seed=14), 3)
        occ = generate_synthetic(SyntheticHandConfig(seed=14, occluder="sphere"), 3)
        # same hand pose; the occluder covers pixels in front of the hand
        closer = 0
        for b, o in zip(base, occ):
            both = (b.depth > 0) & (o.depth > 0)
            closer += int(np.sum(o.depth[both] < b.depth[both] - 1e-6))
        assert closer > 50

    def test_box_occluder_runs(self):
        s = generate_synthetic(SyntheticHandConfig(seed=15, occluder="box"), 1)[0]
        assert (s.depth > 0).sum() > 100

    def test_depth_only_mode(self):
        s = generate_synthetic(SyntheticHandConfig(seed=16, with_rgb=False), 1)[0]
        assert s.rgb is None

    def test_degenerate_config_rejected(self):
        with pytest.raises(ContractError):
            SyntheticHandConfig(bone_lengths_mm={"thumb": (0.0, 1.0, 1.0),
                                                 "index": (1, 1, 1),
                                                 "middle": (1, 1, 1),
                                                 "ring": (1, 1, 1),
                                                 "pinky": (1, 1, 1)})

    def test_unknown_occluder_rejected(self):
        with pytest.raises(ContractError):
            SyntheticHandConfig(occluder="cylinder")
