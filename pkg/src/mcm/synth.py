"""Synthetic articulated-hand sample generator.

A 21-joint chain (wrist, then per finger: base knuckle, two inter-phalangeal
joints and the tip, thumb first) is posed by seed-drawn articulation angles,
skinned with capsules, point-sampled by surface area, optionally occluded by
a solid, and splatted through the pinhole camera into a depth image plus a
flat-shaded RGB image.  Everything is deterministic in (config, seed, index).

Joint ordering is the canonical one used across the whole pipeline: row 0 is
the wrist; rows 1-4 thumb base to tip; then index, middle, ring, pinky.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import SampleRecord
from .errors import ContractError
from .points import CameraIntrinsics

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
JOINT_NAMES = ["wrist"] + [f"{f}_{part}" for f in FINGERS
                           for part in ("mcp", "pip", "dip", "tip")]

# palm-frame knuckle bases (mm): x across the palm, y toward the fingers
_BASES_MM = {
    "thumb": (-38.0, 22.0),
    "index": (-24.0, 78.0),
    "middle": (-8.0, 82.0),
    "ring": (8.0, 78.0),
    "pinky": (24.0, 70.0),
}
# rest yaw of each finger direction, degrees about the palm normal
_REST_YAW_DEG = {"thumb": -55.0, "index": -6.0, "middle": 0.0,
                 "ring": 6.0, "pinky": 12.0}


@dataclass
class SyntheticHandConfig:
    joint_count: int = 21
    bone_lengths_mm: dict = field(default_factory=lambda: {
        "thumb": (34.0, 30.0, 24.0),
        "index": (40.0, 25.0, 21.0),
        "middle": (44.0, 28.0, 23.0),
        "ring": (41.0, 26.0, 22.0),
        "pinky": (31.0, 20.0, 19.0),
    })
    # articulation ranges, degrees
    abduction_deg: tuple[float, float] = (-12.0, 12.0)
    mcp_flex_deg: tuple[float, float] = (-10.0, 65.0)
    pip_flex_deg: tuple[float, float] = (0.0, 80.0)
    dip_flex_deg: tuple[float, float] = (0.0, 55.0)
    # camera pose distribution
    distance_m: tuple[float, float] = (0.38, 0.48)
    lateral_m: tuple[float, float] = (-0.03, 0.03)
    tilt_deg: tuple[float, float] = (-35.0, 35.0)
    roll_deg: tuple[float, float] = (-180.0, 180.0)
    # occluder: "none", "sphere", "box" or "mixed"
    occluder: str = "none"
    occluder_size_mm: tuple[float, float] = (18.0, 34.0)
    occluder_offset_mm: tuple[float, float] = (-60.0, -35.0)  # along -z (toward camera)
    occluder_lateral_mm: tuple[float, float] = (-35.0, 35.0)
    # surface sampling density, points per mm^2
    density: float = 1.5
    image_size: int = 128
    with_rgb: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.joint_count != 21:
            raise ContractError("the synthetic chain is defined for 21 joints")
        for lengths in self.bone_lengths_mm.values():
            if min(lengths) <= 0:
                raise ContractError("bone lengths must be positive")
        if self.occluder not in ("none", "sphere", "box", "mixed"):
            raise ContractError(f"unknown occluder kind {self.occluder!r}")


def default_intrinsics(image_size: int = 128) -> CameraIntrinsics:
    f = image_size * 1.05
    return CameraIntrinsics(fx=f, fy=f, cx=image_size / 2.0,
                            cy=image_size / 2.0, depth_scale=0.0002)


def _rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_axis(axis: np.ndarray, rad: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(rad), np.sin(rad)
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc]])


def hand_forward_kinematics(cfg: SyntheticHandConfig,
                            angles: dict) -> np.ndarray:
    """Palm-frame joint positions (meters) for the given articulation.

    ``angles[finger] = (abduction, mcp_flex, pip_flex, dip_flex)`` in degrees.
    With all angles zero each finger lies straight along its rest direction:
    tip = base + (l1+l2+l3) * dir, which is the closed-form test oracle.
    """
    joints = [np.zeros(3)]
    for finger in FINGERS:
        abd, th1, th2, th3 = angles[finger]
        yaw = _REST_YAW_DEG[finger] + abd
        heading = _rot_z(yaw)
        direction = heading @ np.array([0.0, 1.0, 0.0])
        flex_axis = heading @ np.array([1.0, 0.0, 0.0])
        base = np.array([*_BASES_MM[finger], 0.0]) / 1000.0
        pos = base
        joints.append(pos)
        cum = 0.0
        for length, flex in zip(cfg.bone_lengths_mm[finger], (th1, th2, th3)):
            cum += flex
            seg_dir = _rot_axis(flex_axis, -np.deg2rad(cum)) @ direction
            pos = pos + seg_dir * (length / 1000.0)
            joints.append(pos)
    return np.stack(joints)


def _sample_capsule(p0, p1, radius_m, density, rng):
    """Area-uniform surface points + outward normals of one capsule."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    r = radius_m
    area_mm2 = (2 * np.pi * r * length + 4 * np.pi * r * r) * 1e6
    n = max(8, int(area_mm2 * density))
    cyl_frac = (2 * np.pi * r * length) / (2 * np.pi * r * length + 4 * np.pi * r * r)
    n_cyl = int(n * cyl_frac)
    n_cap = n - n_cyl

    if length > 1e-12:
        u = axis / length
    else:
        u = np.array([0.0, 0.0, 1.0])
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)

    theta = rng.uniform(0, 2 * np.pi, n_cyl)
    h = rng.uniform(0, length, n_cyl)
    normals_cyl = np.outer(np.cos(theta), e1) + np.outer(np.sin(theta), e2)
    pts_cyl = p0 + np.outer(h, u) + r * normals_cyl

    sphere = rng.normal(size=(n_cap, 3))
    sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
    toward_end = sphere @ u > 0
    centers = np.where(toward_end[:, None], p1, p0)
    pts_cap = centers + r * sphere

    return (np.concatenate([pts_cyl, pts_cap]),
            np.concatenate([normals_cyl, sphere]))


_FINGER_RADII_MM = {"thumb": (8.0, 7.0, 6.0), "index": (7.0, 6.0, 5.0),
                    "middle": (7.5, 6.5, 5.5), "ring": (7.0, 6.0, 5.0),
                    "pinky": (6.0, 5.5, 4.5)}
# kept under 10 mm so every joint stays within 10 mm of visible skin
_PALM_RADIUS_MM = 8.0


def skin_hand(cfg: SyntheticHandConfig, joints: np.ndarray, rng):
    """Capsule-skinned surface points + normals (palm frame, meters)."""
    pts, nrm = [], []

    def add(p0, p1, radius_mm):
        p, n = _sample_capsule(p0, p1, radius_mm / 1000.0, cfg.density, rng)
        pts.append(p)
        nrm.append(n)

    wrist = joints[0]
    for fi, finger in enumerate(FINGERS):
        base = 1 + fi * 4
        add(wrist, joints[base], _PALM_RADIUS_MM)          # palm strut
        radii = _FINGER_RADII_MM[finger]
        for seg in range(3):
            add(joints[base + seg], joints[base + seg + 1], radii[seg])
    for fi in range(1, 4):  # webbing between adjacent non-thumb knuckles
        add(joints[1 + fi * 4], joints[1 + (fi + 1) * 4], _PALM_RADIUS_MM)
    return np.concatenate(pts), np.concatenate(nrm)


def sample_occluder(cfg: SyntheticHandConfig, kind: str, hand_center, rng):
    """Surface points + normals of one occluding solid (palm frame)."""
    size = rng.uniform(*cfg.occluder_size_mm) / 1000.0
    offset = np.array([
        rng.uniform(*cfg.occluder_lateral_mm),
        rng.uniform(*cfg.occluder_lateral_mm),
        rng.uniform(*cfg.occluder_offset_mm)]) / 1000.0
    center = hand_center + offset
    if kind == "sphere":
        area_mm2 = 4 * np.pi * size * size * 1e6
        n = max(16, int(area_mm2 * cfg.density))
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return center + size * normals, normals
    # box: axis-aligned, half-extent = size, faces sampled by area
    half = size
    face_area_mm2 = (2 * half) ** 2 * 1e6
    n_face = max(8, int(face_area_mm2 * cfg.density))
    pts, nrm = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            uv = rng.uniform(-half, half, size=(n_face, 2))
            p = np.zeros((n_face, 3))
            p[:, axis] = sign * half
            others = [a for a in range(3) if a != axis]
            p[:, others[0]] = uv[:, 0]
            p[:, others[1]] = uv[:, 1]
            normal = np.zeros(3)
            normal[axis] = sign
            pts.append(center + p)
            nrm.append(np.tile(normal, (n_face, 1)))
    return np.concatenate(pts), np.concatenate(nrm)


_HAND_ALBEDO = np.array([0.85, 0.64, 0.50])
_OCCLUDER_ALBEDO = np.array([0.35, 0.50, 0.85])
_LIGHT_DIR = np.array([0.3, -0.5, -0.8]) / np.linalg.norm([0.3, -0.5, -0.8])


def render(points, normals, albedo, intr: CameraIntrinsics, size: int):
    """Z-buffer splat: nearest point per pixel wins depth and color."""
    z = points[:, 2]
    keep = z > 1e-6
    points, normals, albedo = points[keep], normals[keep], albedo[keep]
    z = z[keep]
    u = np.rint(points[:, 0] * intr.fx / z + intr.cx).astype(np.intp)
    v = np.rint(points[:, 1] * intr.fy / z + intr.cy).astype(np.intp)
    inside = (u >= 0) & (u < size) & (v >= 0) & (v < size)
    u, v, z = u[inside], v[inside], z[inside]
    normals, albedo = normals[inside], albedo[inside]

    depth = np.full((size, size), np.inf)
    np.minimum.at(depth, (v, u), z)
    winner = z == depth[v, u]
    shade = 0.35 + 0.65 * np.maximum(0.0, normals[winner] @ -_LIGHT_DIR)
    rgb = np.zeros((size, size, 3))
    rgb[v[winner], u[winner]] = albedo[winner] * shade[:, None]
    depth[np.isinf(depth)] = 0.0
    return depth, rgb


def generate_synthetic(cfg: SyntheticHandConfig, n: int,
                       return_surfaces: bool = False):
    """Generate ``n`` fully deterministic samples.

    ``return_surfaces`` additionally yields each sample's camera-frame hand
    surface points (before z-buffering), used by the coverage audit: every
    joint lies within 10 mm of its skin by construction.
    """
    intr = default_intrinsics(cfg.image_size)
    samples = []
    surfaces = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed & 0x7FFFFFFF, i]))
        angles = {}
        for finger in FINGERS:
            angles[finger] = (rng.uniform(*cfg.abduction_deg),
                              rng.uniform(*cfg.mcp_flex_deg),
                              rng.uniform(*cfg.pip_flex_deg),
                              rng.uniform(*cfg.dip_flex_deg))
        joints = hand_forward_kinematics(cfg, angles)
        surf, nrm = skin_hand(cfg, joints, rng)

        # pose the palm frame in front of the camera
        tilt_axis = rng.normal(size=3)
        tilt_axis[2] = rng.uniform(0.3, 1.0)  # keep the palm roughly facing
        rot = (_rot_z(rng.uniform(*cfg.roll_deg))
               @ _rot_axis(tilt_axis, np.deg2rad(rng.uniform(*cfg.tilt_deg))))
        hand_center = joints.mean(axis=0)
        t = np.array([rng.uniform(*cfg.lateral_m), rng.uniform(*cfg.lateral_m),
                      rng.uniform(*cfg.distance_m)])

        def to_cam(p):
            return (p - hand_center) @ rot.T + t

        joints_cam = to_cam(joints)
        surf_cam = to_cam(surf)
        nrm_cam = nrm @ rot.T
        albedo = np.tile(_HAND_ALBEDO, (len(surf_cam), 1))
        if return_surfaces:
            surfaces.append(surf_cam.copy())

        kind = cfg.occluder
        if kind == "mixed":
            kind = ("sphere", "box")[int(rng.integers(2))]
        if kind != "none":
            # placed in the camera frame so its offset range is camera-relative
            # (negative z = between the hand and the camera)
            opts, onrm = sample_occluder(cfg, kind, t, rng)
            surf_cam = np.concatenate([surf_cam, opts])
            nrm_cam = np.concatenate([nrm_cam, onrm])
            albedo = np.concatenate([albedo,
                                     np.tile(_OCCLUDER_ALBEDO, (len(opts), 1))])

        depth, rgb = render(surf_cam, nrm_cam, albedo, intr, cfg.image_size)
        u = joints_cam[:, 0] * intr.fx / joints_cam[:, 2] + intr.cx
        v = joints_cam[:, 1] * intr.fy / joints_cam[:, 2] + intr.cy
        if (np.any(joints_cam[:, 2] <= 0) or np.any(u < 0) or np.any(v < 0)
                or np.any(u >= cfg.image_size) or np.any(v >= cfg.image_size)):
            raise ContractError(
                f"sample {i}: pose distribution pushed a joint outside the frustum")
        samples.append(SampleRecord(
            depth=depth, rgb=rgb if cfg.with_rgb else None, intrinsics=intr,
            gt_joints=joints_cam, id=f"sample_{i:05d}"))
    if return_surfaces:
        return samples, surfaces
    return samples
