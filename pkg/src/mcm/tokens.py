"""Keypoint token construction from super points.

A two-stage point-set convolution condenses the super point set into one
global descriptor; replicating it per keypoint and passing it through stacked
bias-induced layers (a shared linear map with per-keypoint biases, the
positional-identity mechanism) yields the initial tokens, which a linear head
projects to the stage-0 3D coordinates.

Keypoint identity is positional: row j of every token/coordinate tensor is
always the same joint, in the dataset's canonical ordering (wrist first, then
fingers base-to-tip in anatomical order).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import SuperPointSet
from .points import NeighborIndex, PointCloud, SetConv, farthest_point_sample, knn
from .tensor import Module, Parameter, Tensor, astensor

_FPS_SEED = 0


@dataclass
class KeypointState:
    """Per-stage tokens and regressed positions (normalized frame)."""

    tokens: Tensor     # [J x C]
    positions: Tensor  # [J x 3]
    stage: int

    @property
    def num_joints(self) -> int:
        return self.tokens.shape[0]


class BILLayer(Module):
    """Shared weight with keypoint-wise independent biases."""

    def __init__(self, name: str, in_dim: int, out_dim: int, num_joints: int,
                 seed: int = 0):
        self.weight = Parameter(f"{name}.w", (in_dim, out_dim),
                                f"normal:{1.0 / np.sqrt(in_dim)}",
                                T.param_seed(seed, f"{name}.w"))
        self.biases = Parameter(f"{name}.b", (num_joints, out_dim),
                                "normal:0.02", T.param_seed(seed, f"{name}.b"))

    def forward(self, h) -> Tensor:
        return T.add(T.matmul(astensor(h), self.weight.value), self.biases.value)

    __call__ = forward


def bil_stack(layers: list[BILLayer], h) -> Tensor:
    """Apply stacked BILs with a leaky nonlinearity between, none after."""
    h = astensor(h)
    for i, layer in enumerate(layers):
        h = layer(h)
        if i < len(layers) - 1:
            h = T.leaky_relu(h)
    return h


class GlobalEncoder(Module):
    """Two stacked set-conv stages collapsing M super points to one vector."""

    def __init__(self, name: str, feat_dim: int, mid_width: int, out_width: int,
                 k: int = 16, seed: int = 0):
        self.k = k
        self.stage1 = SetConv(f"{name}.stage1", in_dim=3 + feat_dim,
                              widths=[mid_width], seed=seed)
        self.stage2 = SetConv(f"{name}.stage2", in_dim=3 + mid_width,
                              widths=[out_width], seed=seed)

    @property
    def out_dim(self) -> int:
        return self.stage2.out_dim

    def forward(self, sp: SuperPointSet) -> Tensor:
        m = len(sp)
        if m < 2:
            raise ValueError("global encoding needs at least 2 super points")
        pc = PointCloud(sp.coords)
        m_mid = max(1, m // 4)
        # geometric FPS start keeps the selected sets storage-order independent
        idx = farthest_point_sample(pc, m_mid, seed=_FPS_SEED, start="centroid_far")
        mid_centers = sp.coords[idx]
        nbr = knn(mid_centers, pc, k=min(self.k, m))
        mid_feats = self.stage1(Tensor(mid_centers), nbr, sp.coords,
                                source_feats=sp.feats)
        # final stage: one FPS-picked center sees every mid point
        mid_pc = PointCloud(mid_centers)
        cidx = farthest_point_sample(mid_pc, 1, seed=_FPS_SEED, start="centroid_far")
        nbr2 = NeighborIndex(np.arange(m_mid)[None, :])
        out = self.stage2(Tensor(mid_centers[cidx]), nbr2, mid_centers,
                          source_feats=mid_feats)
        return T.reshape(out, (self.out_dim,))

    __call__ = forward


class TokenInitializer(Module):
    """Replicated global vector -> 3 BILs -> tokens -> linear coordinate head."""

    def __init__(self, name: str, global_dim: int, bil_widths: tuple[int, int, int],
                 num_joints: int, seed: int = 0):
        widths = [global_dim, *bil_widths]
        self.bils = [BILLayer(f"{name}.bil{i}", widths[i], widths[i + 1],
                              num_joints, seed=seed)
                     for i in range(3)]
        self.num_joints = num_joints
        self.token_dim = bil_widths[-1]
        self.coord_head = Parameter(f"{name}.coord_head",
                                    (self.token_dim, 3),
                                    f"normal:{1.0 / np.sqrt(self.token_dim)}",
                                    T.param_seed(seed, f"{name}.coord_head"))

    def forward(self, global_vec: Tensor) -> KeypointState:
        g = T.reshape(astensor(global_vec), (1, -1))
        replicated = T.mul(Tensor(np.ones((self.num_joints, 1))), g)
        tokens = bil_stack(self.bils, replicated)
        positions = T.matmul(tokens, self.coord_head.value)
        return KeypointState(tokens=tokens, positions=positions, stage=0)

    __call__ = forward
