"""Reference computations used to check the simulator.

Nothing in the simulation path imports this module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np
from numba import njit

from .domain import Index3, VoxelGrid
from .errors import InstanceTooLarge, NonPositiveRadius, ValidationError
from .scheduler import DeviceProfile, Partition

MAX_BRUTE_TOTAL = 5000
MAX_BRUTE_DEVICES = 4


@dataclass(frozen=True)
class DiffusionParams:
    mua: float
    musp: float
    D: float
    mueff: float

    @classmethod
    def from_optics(cls, mua: float, musp: float) -> "DiffusionParams":
        if not (mua > 0 and musp >= 0):
            raise ValidationError("diffusion needs mua > 0 and musp >= 0")
        return cls(mua, musp, 1.0 / (3.0 * (mua + musp)), math.sqrt(3.0 * mua * (mua + musp)))

    @classmethod
    def from_medium(cls, mua: float, mus: float, g: float) -> "DiffusionParams":
        return cls.from_optics(mua, mus * (1.0 - g))


def diffusion_infinite_cw(r, params: DiffusionParams):
    """Steady-state fluence of a unit isotropic point source in an infinite medium."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise NonPositiveRadius("diffusion fluence is defined for r > 0")
    phi = np.exp(-params.mueff * r_arr) / (4.0 * math.pi * params.D * r_arr)
    return float(phi) if phi.ndim == 0 else phi


@njit(cache=True)
def _search(a, t0, total):
    # branch and bound over compositions n_0 + ... + n_{k-1} = total
    k = a.shape[0]
    best = np.inf
    for i in range(k):
        v = a[i] * total + t0[i]
        if v < best:
            best = v
    best_counts = np.zeros(k, dtype=np.int64)
    for i in range(k):
        if a[i] * total + t0[i] == best:
            best_counts[i] = total
            break
    counts = np.zeros(k, dtype=np.int64)
    n = np.zeros(k, dtype=np.int64)
    # iterative depth-first enumeration; level d chooses n[d], the last level takes the rest
    partial = np.zeros(k + 1)
    left = np.zeros(k + 1, dtype=np.int64)
    left[0] = total
    d = 0
    n[0] = -1
    while d >= 0:
        n[d] += 1
        if n[d] > left[d]:
            d -= 1
            continue
        cost = a[d] * n[d] + t0[d] if n[d] > 0 else 0.0
        if cost >= best and n[d] > 0:
            # larger n only costs more on this device
            d -= 1
            continue
        m = max(partial[d], cost)
        rest = left[d] - n[d]
        if d == k - 2:
            last = a[k - 1] * rest + t0[k - 1] if rest > 0 else 0.0
            m = max(m, last)
            if m < best:
                best = m
                for j in range(k - 1):
                    counts[j] = n[j]
                counts[k - 1] = rest
                best_counts[:] = counts
            continue
        # the remaining devices can hold at most floor((best - t0)/a) + 1 photons each
        room = 0
        for j in range(d + 1, k):
            if best > t0[j]:
                room += int((best - t0[j]) / a[j]) + 1
        if room < rest:
            continue
        partial[d + 1] = m
        left[d + 1] = rest
        d += 1
        n[d] = -1
    return best, best_counts


def brute_force_partition(total: int, devices: Sequence[DeviceProfile]) -> Tuple[Partition, float]:
    """Exact minimum-makespan integer partition by exhaustive (pruned) enumeration."""
    if total > MAX_BRUTE_TOTAL or len(devices) > MAX_BRUTE_DEVICES:
        raise InstanceTooLarge(f"brute force is limited to total <= {MAX_BRUTE_TOTAL} "
                               f"and <= {MAX_BRUTE_DEVICES} devices")
    if total < 0 or not devices:
        raise ValidationError("need total >= 0 and at least one device")
    a = np.array([d.a for d in devices], dtype=np.float64)
    t0 = np.array([d.t0 for d in devices], dtype=np.float64)
    if len(devices) == 1:
        return Partition((int(total),)), (a[0] * total + t0[0] if total else 0.0)
    if total == 0:
        return Partition((0,) * len(devices)), 0.0
    best, counts = _search(a, t0, int(total))
    return Partition(tuple(int(c) for c in counts)), float(best)


def raymarch_pathlength(origin: Sequence[float], direction: Sequence[float], grid: VoxelGrid,
                        step: float) -> Dict[Index3, float]:
    """Per-voxel path length of a ray marched in fixed steps until it leaves the grid.

    Each step is credited to the voxel holding its midpoint, so lengths are
    accurate to about one step per voxel.
    """
    if step > 1e-3 * grid.voxel_size:
        raise ValidationError("step must be <= 1e-3 voxel sizes")
    o = np.asarray(origin, dtype=float)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    ext = np.asarray(grid.extent)
    # length to the exit plane along each axis bounds the march
    with np.errstate(divide="ignore", invalid="ignore"):
        exit_t = np.where(u > 0, (ext - o) / u, np.where(u < 0, -o / u, np.inf))
    length = float(np.min(exit_t))
    nsteps = int(math.ceil(length / step))
    out: Dict[Index3, float] = {}
    chunk = 1 << 20
    for s0 in range(0, nsteps, chunk):
        k = np.arange(s0, min(s0 + chunk, nsteps))
        lo = k * step
        seg = np.minimum(step, length - lo)
        mid = o + (lo + 0.5 * seg)[:, None] * u
        idx = np.floor(mid / grid.voxel_size).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(grid.dims) - 1)
        nx, ny, _ = grid.dims
        flat = idx[:, 0] + nx * (idx[:, 1] + ny * idx[:, 2])
        sums = np.bincount(flat, weights=seg)
        for v in np.nonzero(sums)[0]:
            key = (int(v % nx), int((v // nx) % ny), int(v // (nx * ny)))
            out[key] = out.get(key, 0.0) + float(sums[v])
    return out
