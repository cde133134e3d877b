"""Registered property suites: the oracles behind ``mcm check``.

Each suite returns (worst observed error, threshold).  The gradient suite
reports one entry per operation so a corrupted gradient is named directly.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .blocks import CorrespondenceBlock
from .encoder import SuperPointSet
from .points import (NeighborIndex, PointCloud, SetConv, knn,
                     lift_2d_features, CameraIntrinsics)
from .ssm import ContinuousSSM, SSMLayer, apply_kernel, build_kernel, \
    discretize, scan_recurrent
from .tensor import Parameter, Tensor, finite_diff_check
from .tokens import BILLayer, KeypointState
from .training import AugmentationConfig, augment_cloud


def check_ssm_dual_form(runs: int = 100) -> tuple[float, float]:
    worst = 0.0
    for seed in range(runs):
        rng = np.random.default_rng(seed)
        cont = ContinuousSSM(
            a=-np.exp(rng.normal(0.0, 1.0, (8, 16))),
            b=rng.normal(size=(8, 16)), c=rng.normal(size=(8, 16)),
            d=rng.normal(size=8))
        d = discretize(cont, np.exp(rng.uniform(np.log(1e-2), 0.0, 8)))
        u = Tensor(rng.normal(size=(21, 8)))
        diff = np.abs(scan_recurrent(d, u).data
                      - apply_kernel(build_kernel(d, 21), u).data)
        worst = max(worst, float(diff.max()))
    return worst, 1e-9


def check_gradient_ops(seeds: int = 5) -> dict[str, tuple[float, float]]:
    """Finite-difference check of every parameterized operation."""
    out: dict[str, tuple[float, float]] = {}

    def run(name, fn):
        worst = 0.0
        for seed in range(seeds):
            worst = max(worst, fn(np.random.default_rng(seed)))
        out[name] = (worst, 1e-4)

    def f_matmul(rng):
        a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        return finite_diff_check(lambda: T.tsum(T.matmul(a, b)), [a, b])

    def f_layer_norm(rng):
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        g = Tensor(rng.normal(size=6), requires_grad=True)
        b = Tensor(rng.normal(size=6), requires_grad=True)
        probe = Tensor(rng.normal(size=(4, 6)))
        return finite_diff_check(
            lambda: T.tsum(T.mul(T.layer_norm(x, g, b), probe)), [x, g, b])

    def f_gelu(rng):
        x = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        return finite_diff_check(lambda: T.tsum(T.gelu(x)), [x])

    def f_sigmoid(rng):
        x = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        return finite_diff_check(lambda: T.tsum(T.sigmoid(x)), [x])

    def f_conv2d(rng):
        x = Tensor(rng.normal(size=(6, 6, 2)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 2, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        return finite_diff_check(
            lambda: T.tsum(T.conv2d(x, w, b, stride=2, pad=1)), [x, w, b])

    def f_set_conv(rng):
        conv = SetConv("sc", in_dim=7, widths=[5, 4],
                       seed=int(rng.integers(1 << 30)))
        src = rng.normal(size=(6, 3))
        feats = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        centers = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        nbr = NeighborIndex(np.array([[0, 1, 2], [3, 4, 5]]))
        return finite_diff_check(
            lambda: T.tsum(conv(centers, nbr, src, source_feats=feats)),
            conv.parameters() + [feats, centers])

    def f_bil(rng):
        layer = BILLayer("bil", 4, 3, 5, seed=int(rng.integers(1 << 30)))
        h = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        return finite_diff_check(lambda: T.tsum(layer(h)),
                                 layer.parameters() + [h])

    def f_ssm_layer(rng):
        layer = SSMLayer("s", channels=3, state_dim=4,
                         seed=int(rng.integers(1 << 30)))
        u = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        return finite_diff_check(lambda: T.tsum(layer(u)),
                                 layer.parameters() + [u])

    def f_lift2d(rng):
        intr = CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=16.0)
        fmap = Tensor(rng.normal(size=(8, 8, 2)), requires_grad=True)
        pts = rng.normal(size=(5, 3)) * 0.05 + [0, 0, 0.4]
        return finite_diff_check(
            lambda: T.tsum(lift_2d_features(pts, fmap, intr, 0.5)), [fmap])

    run("matmul", f_matmul)
    run("layer_norm", f_layer_norm)
    run("gelu", f_gelu)
    run("sigmoid", f_sigmoid)
    run("conv2d", f_conv2d)
    run("set_conv", f_set_conv)
    run("bil", f_bil)
    run("ssm_layer", f_ssm_layer)
    run("lift_2d", f_lift2d)
    return out


def _mini_block(seed: int):
    head = Parameter("coord_proj", (8, 3), "normal:0.35",
                     T.param_seed(seed, "coord_proj"))
    block = CorrespondenceBlock("blk", token_dim=8, sp_feat_dim=6,
                                coord_head=head, state_dim=4, k_local=4,
                                seed=seed)
    rng = np.random.default_rng(seed + 1000)
    coords = rng.normal(size=(16, 3))
    sp = SuperPointSet(coords=coords, cam_coords=coords,
                       feats=Tensor(rng.normal(size=(16, 6))),
                       c_geo=6, c_depth=0, c_rgb=0)
    tokens = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
    state = KeypointState(tokens=tokens,
                          positions=Tensor(rng.normal(size=(5, 3)) * 0.5),
                          stage=0)
    return block, sp, state, tokens, rng


def check_gradient_block(seeds: int = 5) -> tuple[float, float]:
    worst = 0.0
    for seed in range(seeds):
        block, sp, state, tokens, rng = _mini_block(seed)
        probe_p = Tensor(rng.normal(size=(5, 3)) * 1e-3)
        probe_t = Tensor(rng.normal(size=(5, 8)) * 1e-3)

        def loss():
            out = block(state, sp)
            return T.add(T.tsum(T.mul(out.positions, probe_p)),
                         T.tsum(T.mul(out.tokens, probe_t)))

        worst = max(worst, finite_diff_check(loss, block.parameters() + [tokens]))
    return worst, 1e-4


def check_knn_brute_force() -> tuple[float, float]:
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(500, 3))
    centers = rng.normal(size=(12, 3))
    nbr = knn(centers, PointCloud(pts), k=32)
    worst = 0
    for i, c in enumerate(centers):
        d = np.linalg.norm(pts - c, axis=1)
        expected = np.argsort(d, kind="stable")[:32]
        worst = max(worst, int(np.sum(nbr.indices[i] != expected)))
    return float(worst), 0.5


def check_setconv_permutation() -> tuple[float, float]:
    import itertools
    rng = np.random.default_rng(8)
    conv = SetConv("sc", in_dim=5, widths=[6], seed=3)
    src = rng.normal(size=(5, 3))
    feats = Tensor(rng.normal(size=(5, 2)))
    center = Tensor(rng.normal(size=(1, 3)))
    outs = [conv(center, NeighborIndex(np.array([perm])), src,
                 source_feats=feats).data
            for perm in itertools.permutations([0, 1, 2])]
    worst = max(float(np.max(np.abs(o - outs[0]))) for o in outs)
    return worst, 0.0


def check_reverse_involution() -> tuple[float, float]:
    rng = np.random.default_rng(9)
    x = Tensor(rng.normal(size=(21, 8)))
    return float(np.max(np.abs(T.flip0(T.flip0(x)).data - x.data))), 0.0


def check_correspondence_bilinearity() -> tuple[float, float]:
    block, sp, state, tokens, rng = _mini_block(11)
    u_f = Tensor(rng.normal(size=(5, 8)))
    u_b = Tensor(rng.normal(size=(5, 8)))
    base = block.correspondence_map(u_f, u_b).values.data
    lhs = block.correspondence_map(Tensor(2.0 * u_f.data), u_b).values.data
    rhs = block.correspondence_map(u_f, Tensor(0.5 * u_b.data)).values.data
    worst = max(float(np.max(np.abs(lhs - 2.0 * base))),
                float(np.max(np.abs(rhs - 0.5 * base))))
    return worst, 0.0


def check_augmentation_isometry() -> tuple[float, float]:
    rng = np.random.default_rng(12)
    cloud = rng.normal(size=(40, 3)) * 0.05
    joints = rng.normal(size=(21, 3)) * 0.05
    cfg = AugmentationConfig(scale=(1.0, 1.0))
    out_c, out_j = augment_cloud(cloud, joints, cfg, np.random.default_rng(13))
    before = np.linalg.norm(cloud[:, None] - joints[None, :], axis=2)
    after = np.linalg.norm(out_c[:, None] - out_j[None, :], axis=2)
    return float(np.max(np.abs(after - before))), 1e-12


def run_all(verbose_print=print) -> bool:
    """Run every suite; print one line per result; True when all pass."""
    ok = True

    def report(name, err, tol):
        nonlocal ok
        passed = err <= tol
        ok = ok and passed
        verbose_print(f"{'PASS' if passed else 'FAIL'}  {name:32s} "
                      f"max_err={err:.3e}  tol={tol:.0e}")

    err, tol = check_ssm_dual_form()
    report("ssm_dual_form", err, tol)
    for op, (err, tol) in check_gradient_ops().items():
        report(f"gradient[{op}]", err, tol)
    err, tol = check_gradient_block(seeds=2)
    report("gradient[block_forward]", err, tol)
    err, tol = check_knn_brute_force()
    report("knn_brute_force", err, tol)
    err, tol = check_setconv_permutation()
    report("setconv_permutation", err, tol)
    err, tol = check_reverse_involution()
    report("reverse_involution", err, tol)
    err, tol = check_correspondence_bilinearity()
    report("correspondence_bilinearity", err, tol)
    err, tol = check_augmentation_isometry()
    report("augmentation_isometry", err, tol)
    return ok
