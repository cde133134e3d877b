"""Multi-modal super point encoding.

A point-set convolution subsamples the input cloud into M super points with
local geometric features; two small residual autoencoders (one per image
modality) produce half-resolution 2D feature maps whose values are projected
onto the super points and concatenated with the geometric features.

Fused feature columns are always ordered [3D-geometric | depth | rgb]; in
depth-only mode the rgb block is zeros and the rgb encoder is never run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .points import (CameraIntrinsics, PointCloud, SetConv,
                     farthest_point_sample, knn, lift_2d_features)
from .tensor import Module, Parameter, Tensor

# Architecture-internal farthest-point seeds must not depend on the data RNG,
# otherwise two forward passes of the same model could disagree.
_FPS_SEED = 0


@dataclass
class SuperPointSet:
    """Subsampled points with fused features (normalized + camera frames)."""

    coords: np.ndarray       # [M x 3] normalized frame, network input
    cam_coords: np.ndarray   # [M x 3] camera frame (meters), for projection
    feats: Tensor            # [M x (c_geo + c_depth + c_rgb)]
    c_geo: int
    c_depth: int
    c_rgb: int

    def __len__(self) -> int:
        return len(self.coords)

    def feature_block(self, name: str) -> np.ndarray:
        """View of one fused column block ('geo', 'depth' or 'rgb')."""
        starts = {"geo": 0, "depth": self.c_geo, "rgb": self.c_geo + self.c_depth}
        widths = {"geo": self.c_geo, "depth": self.c_depth, "rgb": self.c_rgb}
        s = starts[name]
        return self.feats.data[:, s:s + widths[name]]


@dataclass
class FeatureMap2D:
    """Half-resolution visual feature map."""

    data: Tensor  # [H/2 x W/2 x C]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


class PointEncoder3D(Module):
    """FPS subsampling plus local set convolution over the raw cloud."""

    def __init__(self, name: str, widths: list[int], k: int = 32, seed: int = 0):
        self.k = k
        self.conv = SetConv(f"{name}.conv", in_dim=3, widths=widths, seed=seed)

    @property
    def out_dim(self) -> int:
        return self.conv.out_dim

    def forward(self, pc: PointCloud, m: int):
        """Return ([M x 3] center coords, [M x out_dim] features)."""
        if m > len(pc):
            raise ContractError(f"super-point count {m} exceeds cloud size {len(pc)}")
        idx = farthest_point_sample(pc, m, seed=_FPS_SEED)
        centers = pc.coords[idx]
        nbr = knn(centers, pc, k=min(self.k, len(pc)))
        feats = self.conv(Tensor(centers), nbr, pc.coords)
        return centers, feats, idx

    __call__ = forward


class _ResidualStage(Module):
    def __init__(self, name: str, channels: int, seed: int):
        scale = 1.0 / np.sqrt(9 * channels)
        def mk(suffix, shape, scheme):
            return Parameter(f"{name}.{suffix}", shape, scheme,
                             T.param_seed(seed, f"{name}.{suffix}"))
        self.w1 = mk("w1", (3, 3, channels, channels), f"normal:{scale}")
        self.b1 = mk("b1", (channels,), "zeros")
        self.w2 = mk("w2", (3, 3, channels, channels), f"normal:{scale}")
        self.b2 = mk("b2", (channels,), "zeros")

    def forward(self, x: Tensor) -> Tensor:
        h = T.leaky_relu(T.conv2d(x, self.w1.value, self.b1.value, pad=1))
        h = T.conv2d(h, self.w2.value, self.b2.value, pad=1)
        return T.leaky_relu(T.add(x, h))

    __call__ = forward


class ImageAutoencoder2D(Module):
    """Residual encoder-decoder emitting a half-resolution feature map.

    Layout: stride-2 stem to H/2, residual stage; stride-2 downsample to H/4,
    residual stage; nearest upsample back to H/2, residual stage.  Only the
    H/2 map is consumed downstream; a reconstruction head exists for
    completeness but is disabled by default.
    """

    def __init__(self, name: str, in_channels: int, widths=(32, 64, 64),
                 seed: int = 0, with_recon_head: bool = False):
        w1, w2, w3 = widths
        self.in_channels = in_channels
        def mk(suffix, shape, scheme):
            return Parameter(f"{name}.{suffix}", shape, scheme,
                             T.param_seed(seed, f"{name}.{suffix}"))
        def conv_init(cin):
            return f"normal:{1.0 / np.sqrt(9 * cin)}"
        self.stem_w = mk("stem.w", (3, 3, in_channels, w1), conv_init(in_channels))
        self.stem_b = mk("stem.b", (w1,), "zeros")
        self.stage1 = _ResidualStage(f"{name}.stage1", w1, seed)
        self.down_w = mk("down.w", (3, 3, w1, w2), conv_init(w1))
        self.down_b = mk("down.b", (w2,), "zeros")
        self.stage2 = _ResidualStage(f"{name}.stage2", w2, seed)
        self.up_w = mk("up.w", (3, 3, w2, w3), conv_init(w2))
        self.up_b = mk("up.b", (w3,), "zeros")
        self.stage3 = _ResidualStage(f"{name}.stage3", w3, seed)
        self.recon_w = None
        if with_recon_head:
            self.recon_w = mk("recon.w", (3, 3, w3, in_channels), conv_init(w3))
            self.recon_b = mk("recon.b", (in_channels,), "zeros")

    def forward(self, img: Tensor) -> FeatureMap2D:
        h, w = img.shape[0], img.shape[1]
        if h % 2 or w % 2:
            raise ContractError(f"image dims must be even, got {h}x{w}")
        x = T.leaky_relu(T.conv2d(img, self.stem_w.value, self.stem_b.value,
                                  stride=2, pad=1))
        x = self.stage1(x)
        x = T.leaky_relu(T.conv2d(x, self.down_w.value, self.down_b.value,
                                  stride=2, pad=1))
        x = self.stage2(x)
        x = T.upsample2x(x)
        x = T.leaky_relu(T.conv2d(x, self.up_w.value, self.up_b.value, pad=1))
        x = self.stage3(x)
        return FeatureMap2D(data=x)

    def reconstruct(self, fmap: FeatureMap2D) -> Tensor:
        """Optional full-resolution reconstruction (unsupervised by default)."""
        if self.recon_w is None:
            raise ContractError("autoencoder built without a reconstruction head")
        x = T.upsample2x(fmap.data)
        return T.conv2d(x, self.recon_w.value, self.recon_b.value, pad=1)

    __call__ = forward


def fuse_superpoints(coords: np.ndarray, cam_coords: np.ndarray, feats3d: Tensor,
                     depth_map: FeatureMap2D, rgb_map, intr: CameraIntrinsics,
                     image_size: tuple[int, int]) -> SuperPointSet:
    """Concatenate [geometric | depth-lifted | rgb-lifted] super point features.

    ``rgb_map`` may be None (depth-only mode): the rgb block is then zeros of
    the declared width.  Maps must be exactly half the input resolution.
    """
    h, w = image_size
    if (depth_map.height, depth_map.width) != (h // 2, w // 2):
        raise ContractError(
            f"depth map {depth_map.height}x{depth_map.width} is not half of {h}x{w}")
    m = len(coords)
    blocks = [feats3d, lift_2d_features(cam_coords, depth_map.data, intr, scale=0.5)]
    if rgb_map is not None:
        if (rgb_map.height, rgb_map.width) != (h // 2, w // 2):
            raise ContractError("rgb map is not half the input resolution")
        c_rgb = rgb_map.channels
        blocks.append(lift_2d_features(cam_coords, rgb_map.data, intr, scale=0.5))
    else:
        c_rgb = 0
    fused = T.concat(blocks, axis=1)
    return SuperPointSet(coords=np.asarray(coords, dtype=np.float64),
                         cam_coords=np.asarray(cam_coords, dtype=np.float64),
                         feats=fused, c_geo=feats3d.shape[1],
                         c_depth=depth_map.channels, c_rgb=c_rgb)


def fuse_superpoints_depth_only(coords, cam_coords, feats3d, depth_map,
                                intr, image_size, rgb_width: int) -> SuperPointSet:
    """Depth-only fusion: the rgb column block is zeros of ``rgb_width``."""
    sp = fuse_superpoints(coords, cam_coords, feats3d, depth_map, None,
                          intr, image_size)
    if rgb_width == 0:
        return sp
    zeros = Tensor(np.zeros((len(coords), rgb_width)))
    return SuperPointSet(coords=sp.coords, cam_coords=sp.cam_coords,
                         feats=T.concat([sp.feats, zeros], axis=1),
                         c_geo=sp.c_geo, c_depth=sp.c_depth, c_rgb=rgb_width)
