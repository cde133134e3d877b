"""End-to-end pose model: encoders -> token initializer -> stacked blocks.

The forward pass works in a normalized frame (cloud centered on its centroid
and scaled by the canonical hand radius); every stage's coordinates can be
mapped back to metric millimeters through the recorded centroid.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .blocks import CorrespondenceBlock
from .encoder import (ImageAutoencoder2D, PointEncoder3D, fuse_superpoints,
                      fuse_superpoints_depth_only)
from .errors import ContractError
from .points import (NORM_RADIUS_M, CameraIntrinsics, PointCloud,
                     denormalize, depth_to_points, normalize_cloud)
from .tensor import Module, Parameter, Tensor
from .tokens import GlobalEncoder, KeypointState, TokenInitializer


@dataclass
class ModelConfig:
    num_joints: int = 21
    token_dim: int = 128
    global_dim: int = 512
    global_mid: int = 256
    bil_hidden: tuple[int, int] = (512, 256)
    num_points: int = 1024
    num_superpoints: int = 256
    knn_k: int = 32
    k_local: int = 16
    point_widths: tuple[int, ...] = (64, 128)
    image_size: int = 128
    depth_widths: tuple[int, int, int] = (32, 64, 64)
    rgb_widths: tuple[int, int, int] = (32, 64, 64)
    use_rgb: bool = True
    state_dim: int = 16
    stacks: int = 3
    ssm_type: str = "correspondence"
    local_inject: bool = True
    local_filter: bool = True
    corr_full: bool = False
    gated_tokens: bool = False
    residual: bool = False
    share_coord_head: bool = True
    seed: int = 0

    @property
    def bil_widths(self) -> tuple[int, int, int]:
        return (*self.bil_hidden, self.token_dim)

    @property
    def rgb_feat_width(self) -> int:
        return self.rgb_widths[-1]

    @property
    def sp_feat_dim(self) -> int:
        return self.point_widths[-1] + self.depth_widths[-1] + self.rgb_feat_width


@dataclass
class ForwardResult:
    """All supervised stages plus bookkeeping for de-normalization."""

    stages: list[KeypointState]          # length stacks + 1, normalized frame
    centroid: np.ndarray                 # [3] meters
    gates: list                          # per-block gate tensors (or None)
    superpoints: object
    timings_ms: dict[str, float] = field(default_factory=dict)

    @property
    def stage_positions(self) -> list[Tensor]:
        return [s.positions for s in self.stages]

    def positions_mm(self, stage: int = -1) -> np.ndarray:
        """Predicted joints of one stage in metric millimeters."""
        return denormalize(self.stages[stage].positions.data, self.centroid) * 1000.0


class PoseModel(Module):
    def __init__(self, cfg: ModelConfig):
        if cfg.stacks < 0:
            raise ContractError("stacks must be >= 0")
        self.cfg = cfg
        seed = cfg.seed
        self.point_enc = PointEncoder3D("enc3d", widths=list(cfg.point_widths),
                                        k=cfg.knn_k,
                                        seed=T.param_seed(seed, "enc3d"))
        self.depth_enc = ImageAutoencoder2D("enc2d_depth", in_channels=1,
                                            widths=cfg.depth_widths,
                                            seed=T.param_seed(seed, "enc2d_depth"))
        self.rgb_enc = None
        if cfg.use_rgb:
            self.rgb_enc = ImageAutoencoder2D("enc2d_rgb", in_channels=3,
                                              widths=cfg.rgb_widths,
                                              seed=T.param_seed(seed, "enc2d_rgb"))
        self.global_enc = GlobalEncoder("global", feat_dim=cfg.sp_feat_dim,
                                        mid_width=cfg.global_mid,
                                        out_width=cfg.global_dim,
                                        k=cfg.k_local,
                                        seed=T.param_seed(seed, "global"))
        self.token_init = TokenInitializer("init", global_dim=cfg.global_dim,
                                           bil_widths=cfg.bil_widths,
                                           num_joints=cfg.num_joints,
                                           seed=T.param_seed(seed, "init"))

        shared_head = None
        if cfg.share_coord_head:
            shared_head = Parameter("coord_proj", (cfg.token_dim, 3),
                                    f"normal:{1.0 / np.sqrt(cfg.token_dim)}",
                                    T.param_seed(seed, "coord_proj"))
        self.blocks = []
        for i in range(cfg.stacks):
            head = shared_head
            if head is None:
                head = Parameter(f"block{i}.coord_proj", (cfg.token_dim, 3),
                                 f"normal:{1.0 / np.sqrt(cfg.token_dim)}",
                                 T.param_seed(seed, f"block{i}.coord_proj"))
            self.blocks.append(CorrespondenceBlock(
                f"block{i}", token_dim=cfg.token_dim,
                sp_feat_dim=cfg.sp_feat_dim, coord_head=head,
                state_dim=cfg.state_dim, k_local=cfg.k_local,
                ssm_type=cfg.ssm_type, local_inject=cfg.local_inject,
                local_filter=cfg.local_filter, corr_full=cfg.corr_full,
                gated_tokens=cfg.gated_tokens, residual=cfg.residual,
                seed=T.param_seed(seed, f"block{i}")))

    # -- forward ---------------------------------------------------------------

    def forward_cloud(self, cloud: PointCloud, depth_img: np.ndarray,
                      rgb_img, intr: CameraIntrinsics,
                      collect_timings: bool = False) -> ForwardResult:
        """Run the pipeline on an already-lifted (and possibly augmented) cloud."""
        cfg = self.cfg
        timings: dict[str, float] = {}
        tic = time.perf_counter

        t0 = tic()
        centroid, cloud_n = normalize_cloud(cloud.coords)
        centers_n, feats3d, idx = self.point_enc(PointCloud(cloud_n),
                                                 m=cfg.num_superpoints)
        cam_coords = cloud.coords[idx]
        timings["encode_3d"] = (tic() - t0) * 1e3

        t0 = tic()
        h = depth_img.shape[0]
        valid = depth_img > 0
        depth_n = np.where(valid, (depth_img - centroid[2]) / NORM_RADIUS_M, 0.0)
        depth_map = self.depth_enc(Tensor(depth_n[:, :, None]))
        if self.rgb_enc is not None:
            if rgb_img is None:
                raise ContractError("model configured with rgb but sample has none")
            rgb_map = self.rgb_enc(Tensor(np.asarray(rgb_img) - 0.5))
            sp = fuse_superpoints(centers_n, cam_coords, feats3d, depth_map,
                                  rgb_map, intr, (h, depth_img.shape[1]))
        else:
            sp = fuse_superpoints_depth_only(centers_n, cam_coords, feats3d,
                                             depth_map, intr,
                                             (h, depth_img.shape[1]),
                                             rgb_width=cfg.rgb_feat_width)
        timings["encode_2d_fuse"] = (tic() - t0) * 1e3

        t0 = tic()
        global_vec = self.global_enc(sp)
        state = self.token_init(global_vec)
        timings["tokens"] = (tic() - t0) * 1e3

        stages = [state]
        gates = []
        for i, block in enumerate(self.blocks):
            t0 = tic()
            state, gate = block(state, sp, return_extras=True)
            stages.append(state)
            gates.append(gate)
            timings[f"block{i}"] = (tic() - t0) * 1e3

        return ForwardResult(stages=stages, centroid=centroid, gates=gates,
                             superpoints=sp,
                             timings_ms=timings if collect_timings else {})

    def forward_sample(self, sample, point_seed: int,
                       collect_timings: bool = False) -> ForwardResult:
        """Lift the sample's depth image and run the pipeline."""
        cloud = depth_to_points(sample.depth, sample.intrinsics,
                                n=self.cfg.num_points, seed=point_seed)
        rgb = sample.rgb if self.cfg.use_rgb else None
        return self.forward_cloud(cloud, sample.depth, rgb, sample.intrinsics,
                                  collect_timings=collect_timings)

    __call__ = forward_sample


def normalize_targets(gt_joints: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Ground truth mapped into the frame the stages are regressed in."""
    return (np.asarray(gt_joints, dtype=np.float64) - centroid) / NORM_RADIUS_M


def ablation_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Named wiring presets mirroring the ablation table."""
    presets = {
        "baseline": dict(ssm_type="none", local_inject=False, local_filter=False),
        "standard": dict(ssm_type="standard", local_inject=False, local_filter=False),
        "corr_only": dict(ssm_type="correspondence", local_inject=False,
                          local_filter=False),
        "corr_filter": dict(ssm_type="correspondence", local_inject=False,
                            local_filter=True),
        "corr_inject": dict(ssm_type="correspondence", local_inject=True,
                            local_filter=False),
        "standard_locals": dict(ssm_type="standard", local_inject=True,
                                local_filter=True),
        "full": dict(ssm_type="correspondence", local_inject=True,
                     local_filter=True),
    }
    if variant not in presets:
        raise ContractError(f"unknown ablation variant {variant!r}; "
                            f"choose from {sorted(presets)}")
    return replace(base, **presets[variant])
