"""Sample records and their on-disk format.

A sample directory holds:
  depth.pgm   binary P5, 16-bit (big-endian per the netpbm standard),
              stored value = round(depth_m / depth_scale)
  rgb.ppm     binary P6, 8-bit, values in [0, 255]  (absent in depth-only data)
  meta.txt    line 1: "fx fy cx cy depth_scale", then one "x y z" line per
              joint, meters, full float64 precision

Reading back a written sample reproduces the joints bit-identically and the
depth to within depth_scale / 2 (the documented quantization bound).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError
from .points import CameraIntrinsics


@dataclass
class SampleRecord:
    depth: np.ndarray            # [H x W] meters
    rgb: np.ndarray | None       # [H x W x 3] in [0, 1], or None
    intrinsics: CameraIntrinsics
    gt_joints: np.ndarray        # [J x 3] meters, camera frame
    id: str

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.gt_joints = np.asarray(self.gt_joints, dtype=np.float64)
        if self.rgb is not None:
            self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if np.any(self.depth < 0):
            raise ContractError("depth image contains negative values")

    @property
    def num_joints(self) -> int:
        return len(self.gt_joints)


def _write_pnm_header(f, magic: bytes, w: int, h: int, maxval: int) -> None:
    f.write(magic + b"\n" + f"{w} {h}\n{maxval}\n".encode("ascii"))


def _read_pnm_header(f, path: str, expected_magic: bytes):
    magic = f.read(2)
    if magic != expected_magic:
        raise ParseError(f"{path}: bad magic {magic!r}, expected {expected_magic!r}")
    fields = []
    while len(fields) < 3:
        line = f.readline()
        if not line:
            raise ParseError(f"{path}: truncated header at byte {f.tell()}")
        text = line.split(b"#", 1)[0]
        fields.extend(text.split())
    try:
        w, h, maxval = (int(v) for v in fields[:3])
    except ValueError as exc:
        raise ParseError(f"{path}: malformed header field: {exc}") from exc
    return w, h, maxval


def write_sample(sample: SampleRecord, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    intr = sample.intrinsics
    h, w = sample.depth.shape
    quant = np.rint(sample.depth / intr.depth_scale)
    if np.any(quant > 65535):
        raise ContractError("depth exceeds the 16-bit range at this depth_scale")
    with open(os.path.join(directory, "depth.pgm"), "wb") as f:
        _write_pnm_header(f, b"P5", w, h, 65535)
        f.write(quant.astype(">u2").tobytes())
    if sample.rgb is not None:
        with open(os.path.join(directory, "rgb.ppm"), "wb") as f:
            _write_pnm_header(f, b"P6", w, h, 255)
            f.write(np.rint(np.clip(sample.rgb, 0.0, 1.0) * 255).astype(np.uint8)
                    .tobytes())
    with open(os.path.join(directory, "meta.txt"), "w") as f:
        f.write(f"{float(intr.fx)!r} {float(intr.fy)!r} {float(intr.cx)!r} "
                f"{float(intr.cy)!r} {float(intr.depth_scale)!r}\n")
        for x, y, z in sample.gt_joints:
            # Python float repr round-trips float64 exactly
            f.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def read_sample(directory: str) -> SampleRecord:
    meta_path = os.path.join(directory, "meta.txt")
    if not os.path.isfile(meta_path):
        raise ParseError(f"{directory}: missing meta.txt")
    with open(meta_path) as f:
        head = f.readline().split()
        if len(head) != 5:
            raise ParseError(f"{meta_path}: expected 5 intrinsics fields, "
                             f"got {len(head)}")
        fx, fy, cx, cy, depth_scale = (float(v) for v in head)
        joints = []
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ParseError(f"{meta_path}: malformed joint line {line!r}")
            joints.append([float(v) for v in parts])
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, depth_scale=depth_scale)

    depth_path = os.path.join(directory, "depth.pgm")
    with open(depth_path, "rb") as f:
        w, h, maxval = _read_pnm_header(f, depth_path, b"P5")
        if maxval != 65535:
            raise ParseError(f"{depth_path}: expected 16-bit maxval, got {maxval}")
        offset = f.tell()
        raw = f.read(w * h * 2)
        if len(raw) != w * h * 2:
            raise ParseError(f"{depth_path}: truncated payload at byte "
                             f"{offset + len(raw)} (need {w * h * 2} bytes)")
    depth = np.frombuffer(raw, dtype=">u2").reshape(h, w).astype(np.float64)
    depth *= depth_scale

    rgb = None
    rgb_path = os.path.join(directory, "rgb.ppm")
    if os.path.isfile(rgb_path):
        with open(rgb_path, "rb") as f:
            w2, h2, maxval = _read_pnm_header(f, rgb_path, b"P6")
            if maxval != 255:
                raise ParseError(f"{rgb_path}: expected 8-bit maxval, got {maxval}")
            offset = f.tell()
            raw = f.read(w2 * h2 * 3)
            if len(raw) != w2 * h2 * 3:
                raise ParseError(f"{rgb_path}: truncated payload at byte "
                                 f"{offset + len(raw)}")
        rgb = np.frombuffer(raw, dtype=np.uint8).reshape(h2, w2, 3) / 255.0

    return SampleRecord(depth=depth, rgb=rgb, intrinsics=intr,
                        gt_joints=np.array(joints),
                        id=os.path.basename(os.path.normpath(directory)))


def write_dataset(samples: list[SampleRecord], directory: str) -> None:
    for sample in samples:
        write_sample(sample, os.path.join(directory, sample.id))


def read_dataset(directory: str) -> list[SampleRecord]:
    """Read every sample subdirectory (sorted by name)."""
    if not os.path.isdir(directory):
        raise ParseError(f"{directory}: not a directory")
    names = sorted(d for d in os.listdir(directory)
                   if os.path.isdir(os.path.join(directory, d)))
    samples = [read_sample(os.path.join(directory, d)) for d in names]
    if not samples:
        raise ContractError(f"{directory}: dataset directory contains no samples")
    return samples
