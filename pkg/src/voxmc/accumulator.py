"""Fluence accumulation buffers, merging and normalization.

Two accumulation modes are supported. Shared maps hold one float64 buffer
that concurrent workers update with compare-and-swap adds. Private maps are
owned by one worker and accumulate integer fixed-point "ticks"; summing
integers is exact, so merged private maps are bit-identical whatever the
worker count or merge order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from numba import njit

from ._atomic import add_f64
from .domain import AccumulationMode, Index3, VoxelGrid
from .errors import (AccumulatorOverflow, AlreadyNormalized, DimensionMismatch, ValidationError,
                     VoxelOutOfRange)

_TICK_HEADROOM_BITS = 60  # leaves a factor 8 below int64 for roulette-boosted photons


def tick_scale(photon_count: int) -> float:
    """Ticks per unit weight for a run of ``photon_count`` photons.

    No voxel can collect more than about ``photon_count`` weight, so the
    scale is chosen to keep that below 2**60 ticks. Up to a million photons
    this is 2**40 (about 1e-12 resolution).
    """
    bits = _TICK_HEADROOM_BITS - int(photon_count).bit_length()
    return float(2 ** max(24, min(40, bits)))


@njit(cache=True, nogil=True)
def _overflowing(ticks, limit):
    for v in ticks:
        if v < 0 or v > limit:
            return True
    return False


@dataclass(eq=False)
class FluenceMap:
    """Deposited weight per voxel (or fluence once normalized).

    ``data`` has shape ``dims`` in Fortran order, so ``flat`` is the x-fastest
    buffer used by the kernels and volume files. A private map also keeps its
    exact integer ``ticks``; ``data`` is derived from them.
    """

    dims: Index3
    data: np.ndarray = field(repr=False)
    photon_count: int
    normalized: bool = False
    mode: AccumulationMode = AccumulationMode.PRIVATE_MERGE
    ticks: Optional[np.ndarray] = field(default=None, repr=False)
    scale: float = 2.0**40
    zero_mua: Optional[np.ndarray] = field(default=None, repr=False)
    hits: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def empty(cls, dims: Index3, photon_count: int = 0,
              mode: AccumulationMode = AccumulationMode.PRIVATE_MERGE,
              scale: Optional[float] = None) -> "FluenceMap":
        dims = tuple(int(d) for d in dims)
        n = int(np.prod(dims))
        data = np.zeros(dims, dtype=np.float64, order="F")
        ticks = np.zeros(n, dtype=np.int64) if mode is AccumulationMode.PRIVATE_MERGE else None
        if scale is None:
            scale = tick_scale(max(photon_count, 1))
        return cls(dims, data, int(photon_count), False, mode, ticks, float(scale))

    @classmethod
    def from_ticks(cls, dims: Index3, ticks: np.ndarray, photon_count: int, scale: float,
                   hits: Optional[np.ndarray] = None) -> "FluenceMap":
        if _overflowing(ticks, np.int64(2**62)):
            raise AccumulatorOverflow("tick buffer left its safe range; lower the photon count")
        data = (ticks / scale).reshape(dims, order="F")
        return cls(tuple(dims), data, int(photon_count), False, AccumulationMode.PRIVATE_MERGE,
                   ticks, float(scale), hits=hits)

    @classmethod
    def from_shared(cls, dims: Index3, buffer: np.ndarray, photon_count: int,
                    hits: Optional[np.ndarray] = None) -> "FluenceMap":
        data = buffer.reshape(dims, order="F")
        return cls(tuple(dims), data, int(photon_count), False, AccumulationMode.SHARED_ATOMIC,
                   hits=hits)

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, order="F")

    @property
    def nvoxels(self) -> int:
        return int(np.prod(self.dims))

    def total(self) -> float:
        if self.ticks is not None:
            # the whole map holds about photon_count weight, far inside int64
            return int(np.sum(self.ticks)) / self.scale
        return math.fsum(self.flat)


def _flat_index(fmap: FluenceMap, voxel: Sequence[int]) -> int:
    if len(voxel) != 3 or not all(0 <= int(i) < n for i, n in zip(voxel, fmap.dims)):
        raise VoxelOutOfRange(f"voxel {tuple(voxel)} outside dims {fmap.dims}")
    ix, iy, iz = (int(i) for i in voxel)
    nx, ny, _ = fmap.dims
    return ix + nx * (iy + ny * iz)


def deposit(fmap: FluenceMap, voxel: Sequence[int], dw: float) -> None:
    """Add ``dw`` to one voxel; safe under concurrent callers for shared maps."""
    if fmap.normalized:
        raise AlreadyNormalized("cannot deposit into a normalized map")
    if not dw >= 0:
        raise ValidationError(f"deposit must be >= 0, got {dw}")
    v = _flat_index(fmap, voxel)
    if fmap.mode is AccumulationMode.SHARED_ATOMIC:
        add_f64(fmap.flat, v, float(dw))
    else:
        fmap.ticks[v] += np.int64(dw * fmap.scale + 0.5)
        fmap.flat[v] = fmap.ticks[v] / fmap.scale


def merge(maps: Sequence[FluenceMap]) -> FluenceMap:
    """Voxelwise sum in list (worker-index) order.

    Private maps with a common scale are merged on their integer ticks, which
    makes the result independent of order and grouping.
    """
    maps = list(maps)
    if not maps:
        raise ValidationError("merge needs at least one map")
    dims = maps[0].dims
    for m in maps:
        if m.dims != dims:
            raise DimensionMismatch(f"cannot merge maps of dims {dims} and {m.dims}")
        if m.normalized:
            raise AlreadyNormalized("merge raw deposit maps before normalizing")
    count = sum(m.photon_count for m in maps)
    hits = None
    if all(m.hits is not None for m in maps):
        hits = maps[0].hits.copy()
        for m in maps[1:]:
            hits += m.hits
    if all(m.ticks is not None and m.scale == maps[0].scale for m in maps):
        ticks = maps[0].ticks.copy()
        for m in maps[1:]:
            ticks += m.ticks
        return FluenceMap.from_ticks(dims, ticks, count, maps[0].scale, hits)
    buf = maps[0].flat.copy()
    for m in maps[1:]:
        buf += m.flat
    return FluenceMap.from_shared(dims, buf, count, hits)


def normalize(fmap: FluenceMap, grid: VoxelGrid) -> FluenceMap:
    """Convert deposited weight E to fluence E / (mua * V * N) in 1/mm^2 per photon.

    Voxels with zero absorption carry no fluence information; they are set to
    0 and flagged in ``zero_mua``.
    """
    if fmap.normalized:
        raise AlreadyNormalized("map is already normalized")
    if fmap.dims != grid.dims:
        raise DimensionMismatch(f"map dims {fmap.dims} do not match grid dims {grid.dims}")
    if fmap.photon_count < 1:
        raise ValidationError("photon_count must be >= 1 to normalize")
    mua = grid.mua_volume()
    zero = mua <= 0.0
    denom = np.where(zero, 1.0, mua) * grid.voxel_size**3 * fmap.photon_count
    phi = np.where(zero, 0.0, fmap.data / denom)
    return replace(fmap, data=np.asfortranarray(phi), normalized=True, ticks=None,
                   zero_mua=np.asfortranarray(zero))
