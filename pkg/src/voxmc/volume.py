"""Raw float32 volume files with a JSON sidecar.

The volume is headerless little-endian float32 in x-fastest order (x, then
y, then z). The sidecar ``<path>.json`` records dims, voxel size, photon
count, normalization, seed, ordering and a 64-bit FNV-1a checksum of the
volume bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit

from .accumulator import FluenceMap
from .errors import IoError

ORDER = "x-fastest"
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


@njit(cache=True)
def _fnv1a(data):
    h = _FNV_OFFSET
    for b in data:
        h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    return int(_fnv1a(np.frombuffer(data, dtype=np.uint8)))


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".json")


def volume_bytes(fmap: FluenceMap) -> bytes:
    return fmap.flat.astype("<f4").tobytes()


def write_volume(fmap: FluenceMap, path, voxel_size: float = 1.0,
                 seed: Optional[int] = None) -> dict:
    """Write the volume and its sidecar; returns the sidecar contents."""
    raw = volume_bytes(fmap)
    meta = {
        "dims": list(fmap.dims),
        "voxel_size_mm": float(voxel_size),
        "photon_count": int(fmap.photon_count),
        "normalized": bool(fmap.normalized),
        "seed": None if seed is None else int(seed),
        "checksum": f"{fnv1a64(raw):016x}",
        "order": ORDER,
        "dtype": "float32-le",
    }
    try:
        Path(path).write_bytes(raw)
        sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write volume {path}: {exc}") from exc
    return meta


def read_volume(path, verify: bool = True) -> FluenceMap:
    """Load a volume written by ``write_volume``, checking size and checksum."""
    try:
        raw = Path(path).read_bytes()
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read volume {path}: {exc}") from exc
    dims = tuple(int(d) for d in meta["dims"])
    if len(raw) != 4 * int(np.prod(dims)):
        raise IoError(f"{path}: {len(raw)} bytes do not match dims {dims}")
    if meta.get("order", ORDER) != ORDER:
        raise IoError(f"{path}: unsupported ordering {meta['order']!r}")
    if verify and f"{fnv1a64(raw):016x}" != meta["checksum"]:
        raise IoError(f"{path}: checksum mismatch")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    fmap = FluenceMap.from_shared(dims, values, int(meta["photon_count"]))
    fmap.normalized = bool(meta["normalized"])
    return fmap
