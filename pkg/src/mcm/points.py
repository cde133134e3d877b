"""Geometric primitives: depth lifting, sampling, neighbor search, and the
shared point-set convolution used by every local feature aggregator.

All index-producing operations are exact (brute force; clouds stay small)
and deterministic: distance ties always break toward the lower source index,
and every random choice is driven by an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Module, Parameter, Tensor, astensor

# Canonical per-sample normalization radius: hand-sized clouds are mapped to
# roughly the unit ball before entering the network.
NORM_RADIUS_M = 0.150


@dataclass
class CameraIntrinsics:
    """Pinhole model; depth_scale converts stored depth units to meters."""

    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 0.001

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.depth_scale <= 0:
            raise ContractError("focal lengths and depth_scale must be positive")


@dataclass
class PointCloud:
    coords: np.ndarray                       # [N x 3] meters, camera frame
    source_pixels: np.ndarray | None = None  # [N x 2] (row, col)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or len(self.coords) < 1:
            raise ContractError(f"point cloud needs [N x 3] coords, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ContractError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.coords)


@dataclass
class NeighborIndex:
    indices: np.ndarray  # [centers x k] into the source cloud
    k: int = field(init=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp)
        self.k = self.indices.shape[1]

    @property
    def center_count(self) -> int:
        return self.indices.shape[0]


def depth_to_points(depth: np.ndarray, intr: CameraIntrinsics, n: int,
                    seed: int) -> PointCloud:
    """Lift ``n`` seed-sampled valid depth pixels to camera-frame 3D points.

    Pixel (row v, col u) with metric depth d maps to
    ((u - cx) d / fx, (v - cy) d / fy, d).  Sampling is without replacement
    while enough valid pixels exist, with replacement otherwise.
    """
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.nonzero((depth > 0) & np.isfinite(depth))
    if len(rows) == 0:
        raise ContractError("depth image has no valid (positive, finite) pixels")
    rng = np.random.default_rng(seed)
    replace = len(rows) < n
    pick = rng.choice(len(rows), size=n, replace=replace)
    v, u = rows[pick].astype(np.float64), cols[pick].astype(np.float64)
    d = depth[rows[pick], cols[pick]]
    coords = np.stack([(u - intr.cx) * d / intr.fx,
                       (v - intr.cy) * d / intr.fy,
                       d], axis=1)
    return PointCloud(coords, source_pixels=np.stack([rows[pick], cols[pick]], axis=1))


def project_points(coords: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Inverse of depth lifting: camera-frame points to (u, v) pixel coords."""
    coords = np.asarray(coords, dtype=np.float64)
    z = coords[:, 2]
    u = coords[:, 0] * intr.fx / z + intr.cx
    v = coords[:, 1] * intr.fy / z + intr.cy
    return np.stack([u, v], axis=1)


def farthest_point_sample(pc: PointCloud, m: int, seed: int,
                          start: str = "seed") -> np.ndarray:
    """Greedy max-min subsample; the first point is drawn from the seed.

    Each later point maximizes its distance to the already-selected set;
    ties break toward the lower index.  ``start="centroid_far"`` replaces the
    seeded first pick with the point farthest from the centroid, a geometric
    choice that makes the selected *set* independent of storage order (used
    where permutation invariance of downstream features is required).
    """
    n = len(pc)
    if m > n:
        raise ContractError(f"cannot sample {m} points from a cloud of {n}")
    if start == "centroid_far":
        first = int(np.argmax(np.linalg.norm(
            pc.coords - pc.coords.mean(axis=0), axis=1)))
    elif start == "seed":
        rng = np.random.default_rng(seed)
        first = int(rng.integers(n))
    else:
        raise ContractError(f"unknown FPS start mode {start!r}")
    selected = np.empty(m, dtype=np.intp)
    selected[0] = first
    dist = np.linalg.norm(pc.coords - pc.coords[first], axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dist))  # argmax takes the lowest index on ties
        selected[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(pc.coords - pc.coords[nxt], axis=1))
    return selected


def knn(centers: np.ndarray, source: PointCloud, k: int) -> NeighborIndex:
    """Exact k nearest source points per center, ascending distance.

    Equal distances order by source index (stable sort on the squared
    distance matrix).
    """
    centers = np.asarray(centers, dtype=np.float64)
    n = len(source)
    if k > n:
        raise ContractError(f"k={k} exceeds source size {n}")
    diff = centers[:, None, :] - source.coords[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    order = np.argsort(d2, axis=1, kind="stable")
    return NeighborIndex(order[:, :k])


class SetConv(Module):
    """Shared pointwise MLP over neighborhoods with max reduction.

    Per center, each of its k neighbors is described by [p - center | feats];
    a shared multilayer map (leaky-relu between and after layers) lifts the
    description, and an elementwise max over the k neighbors produces the
    center's output vector.  Invariant to neighbor order by construction.
    """

    def __init__(self, name: str, in_dim: int, widths: list[int], seed: int = 0):
        if not widths:
            raise ContractError("SetConv needs at least one layer width")
        self.in_dim = in_dim
        self.widths = list(widths)
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        prev = in_dim
        for i, w in enumerate(widths):
            wname, bname = f"{name}.w{i}", f"{name}.b{i}"
            self.weights.append(Parameter(
                wname, (prev, w), f"normal:{1.0 / np.sqrt(prev)}",
                T.param_seed(seed, wname)))
            self.biases.append(Parameter(bname, (w,), "zeros",
                                         T.param_seed(seed, bname)))
            prev = w

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def forward(self, centers, neighbors: NeighborIndex,
                source_coords: np.ndarray, source_feats=None,
                center_feats=None) -> Tensor:
        """Aggregate per-center descriptors to a [centers x out_dim] tensor.

        ``centers`` may require gradients (rel-coords backprop into them);
        ``center_feats`` rows, when given, are broadcast to each neighbor of
        their center before the MLP (token-conditioned aggregation).
        """
        idx = neighbors.indices
        m, k = idx.shape
        src = Tensor(np.asarray(source_coords, dtype=np.float64))
        grouped = T.gather_rows(src, idx)                      # [m, k, 3]
        centers = astensor(centers)
        rel = T.sub(grouped, T.reshape(centers, (m, 1, 3)))
        parts = [rel]
        if center_feats is not None:
            cf = astensor(center_feats)
            ones = Tensor(np.ones((m, k, 1)))
            parts.append(T.mul(ones, T.reshape(cf, (m, 1, cf.shape[1]))))
        if source_feats is not None:
            sf = astensor(source_feats)
            parts.append(T.gather_rows(sf, idx))               # [m, k, f]
        h = T.concat(parts, axis=2) if len(parts) > 1 else parts[0]
        if h.shape[2] != self.in_dim:
            raise ContractError(
                f"descriptor width {h.shape[2]} != configured in_dim {self.in_dim}")
        h = T.reshape(h, (m * k, self.in_dim))
        for w, b in zip(self.weights, self.biases):
            h = T.leaky_relu(T.add(T.matmul(h, w.value), b.value))
        h = T.reshape(h, (m, k, self.out_dim))
        return T.tmax(h, axis=1)

    __call__ = forward


def lift_2d_features(coords: np.ndarray, fmap, intr: CameraIntrinsics,
                     scale: float) -> Tensor:
    """Bilinearly sample a [H' x W' x C] feature map at projected 3D points.

    Projection uses full-resolution pixel coordinates multiplied by ``scale``
    (0.5 for half-resolution maps).  Samples are clamped to the map bounds;
    points with non-positive depth contribute zero features.
    """
    fmap = astensor(fmap)
    hp, wp, c = fmap.shape
    coords = np.asarray(coords, dtype=np.float64)
    z = coords[:, 2]
    bad = z <= 0
    zsafe = np.where(bad, 1.0, z)
    u = (coords[:, 0] * intr.fx / zsafe + intr.cx) * scale
    v = (coords[:, 1] * intr.fy / zsafe + intr.cy) * scale
    u = np.clip(u, 0.0, wp - 1.0)
    v = np.clip(v, 0.0, hp - 1.0)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    x1 = np.minimum(x0 + 1, wp - 1)
    y1 = np.minimum(y0 + 1, hp - 1)
    fu, fv = u - x0, v - y0
    w00 = (1 - fu) * (1 - fv)
    w01 = fu * (1 - fv)
    w10 = (1 - fu) * fv
    w11 = fu * fv
    flat = T.reshape(fmap, (hp * wp, c))
    out = None
    for wgt, yy, xx in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
        wgt = np.where(bad, 0.0, wgt)
        term = T.mul(T.gather_rows(flat, yy * wp + xx), Tensor(wgt[:, None]))
        out = term if out is None else T.add(out, term)
    return out


def normalize_cloud(coords: np.ndarray, *extra: np.ndarray):
    """Center on the cloud centroid and scale by the canonical hand radius.

    Returns (centroid, normalized coords, *normalized extras); extras share
    the cloud's frame (e.g. ground-truth joints).
    """
    coords = np.asarray(coords, dtype=np.float64)
    centroid = coords.mean(axis=0)
    normed = (coords - centroid) / NORM_RADIUS_M
    others = tuple((np.asarray(e, dtype=np.float64) - centroid) / NORM_RADIUS_M
                   for e in extra)
    return (centroid, normed, *others)


def denormalize(coords: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """Invert normalize_cloud for predicted coordinates."""
    return np.asarray(coords, dtype=np.float64) * NORM_RADIUS_M + centroid
