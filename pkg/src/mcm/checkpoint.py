"""Parameter checkpoint file format.

Little-endian binary.  Header: magic ``MCM1``, version u32, parameter count
u32.  Per parameter: name length u32, UTF-8 name, rank u32, one u32 per
dimension, then the raw float64 payload in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError, ParseError
from .tensor import Module, Parameter

MAGIC = b"MCM1"
VERSION = 1


def save_checkpoint(params: list[Parameter], path: str) -> None:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise ContractError("parameter names are not unique")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            data = np.ascontiguousarray(p.value.data, dtype="<f8")
            f.write(struct.pack("<I", len(name)))
            f.write(name)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise ParseError(f"{path}: truncated at byte {off}")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if off + name_len > len(blob):
            raise ParseError(f"{path}: truncated name at byte {off}")
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = take("<I")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        payload = n * 8
        if off + payload > len(blob):
            raise ParseError(f"{path}: truncated payload for {name!r} at byte {off}")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
        off += payload
        out[name] = arr.astype(np.float64)
    return out


def apply_checkpoint(model: Module, path: str) -> None:
    """Load values into a model by parameter name (shapes must match)."""
    values = load_checkpoint(path)
    params = {p.name: p for p in model.parameters()}
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise ContractError(
            f"checkpoint mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
    for name, p in params.items():
        if values[name].shape != p.value.shape:
            raise ContractError(
                f"{name}: checkpoint shape {values[name].shape} != "
                f"model shape {p.value.shape}")
        p.value.data = values[name].copy()
        p.value.zero_grad()
