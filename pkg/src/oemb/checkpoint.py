"""OEMB named-tensor checkpoints with a JSON sidecar.

Layout (little-endian): ``b"OEMB"``, u32 version, u32 tensor count, then per
tensor u16 name length, UTF-8 name, u8 rank, rank x u32 dims and the float32
payload in row-major order. The sidecar ``<name>.json`` holds the
architecture and dimensions.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import DataFormatError, atomic_write_bytes
from .model import ModelParams

MAGIC = b"OEMB"
VERSION = 1


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def encode_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_tensors(blob: bytes, where: str = "<bytes>") -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise DataFormatError(f"{where}: bad magic {blob[:4]!r}")
    pos = 4
    try:
        version, count = struct.unpack_from("<II", blob, pos)
        pos += 8
        if version != VERSION:
            raise DataFormatError(f"{where}: unsupported version {version}")
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise DataFormatError(f"{where}: truncated tensor {name!r}")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            tensors[name] = arr.astype(np.float64)
    except struct.error:
        raise DataFormatError(f"{where}: truncated checkpoint") from None
    if pos != len(blob):
        raise DataFormatError(f"{where}: {len(blob) - pos} trailing bytes")
    return tensors


def save_checkpoint(path, params: ModelParams) -> None:
    """Write tensors and sidecar atomically (temp file + rename)."""
    params.validate()
    atomic_write_bytes(path, encode_tensors(params.tensors))
    meta = json.dumps(params.meta(), sort_keys=True, indent=1) + "\n"
    atomic_write_bytes(sidecar_path(path), meta.encode("utf-8"))


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise DataFormatError(f"{path}: missing sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    try:
        params = ModelParams(meta["arch"], int(meta["d_w"]), int(meta["d_v"]),
                             int(meta["d_e"]), int(meta["d_a"]))
    except KeyError as exc:
        raise DataFormatError(f"{side}: missing key {exc}") from None
    if int(meta.get("d_h", params.d_h)) != params.d_h:
        raise DataFormatError(f"{side}: d_h must equal d_e")
    params.tensors = decode_tensors(path.read_bytes(), str(path))
    try:
        params.validate()
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    return params
