"""Per-photon random walk through a labeled voxel grid.

Photons lose weight continuously along each voxel segment (deposit equals the
weight lost in that voxel) and scatter after consuming a sampled number of
scattering lengths. Free paths are tracked in dimensionless units so a path
sampled in one medium carries over correctly into a medium with different
``mus``.

All hot code is numba-compiled and releases the GIL. The Python-level
functions (``launch``, ``advance``, ``hg_scatter`` ...) call the same compiled
helpers that the batch kernels use.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numba import njit, types
from numba.extending import overload

from ._atomic import atomic_add_f64, atomic_dec_if_positive
from .accumulator import tick_scale
from .domain import (BoundaryMode, Index3, IsotropicSource, Scene,
                     SimulationConfig, Source, Vec3, VoxelGrid, voxel_of)
from .errors import SourceOutsideDomain
from .rng import RngStream, next_float, seed_state

C_MM_PER_NS = 299.792458
LAUNCH_NUDGE = 1e-6  # mm
ISO_G_EPS = 1e-6
_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi

# step outcome codes
K_SCATTERED, K_CROSSED, K_EXITED, K_REFLECTED, K_TERMINATED = range(5)

# tally slots
T_DEPOSITED, T_ESCAPED, T_KILLED, T_TRUNCATED, T_PHOTONS, T_STEPS, T_LAUNCH_FAIL = range(7)
N_TALLIES = 7

SRC_PENCIL, SRC_ISOTROPIC = 0, 1

# columns of the kernel media table
(M_MUA, M_MUS, M_G, M_N, M_INV_MUS, M_N_OVER_C, M_C_OVER_N,
 M_HG_A, M_HG_B, M_HG_C) = range(10)


def kernel_media(grid: VoxelGrid) -> np.ndarray:
    table = grid.media_table()
    mus = table[:, 1]
    inv_mus = np.divide(1.0, mus, out=np.zeros_like(mus), where=mus > 0)
    n = table[:, 3]
    hg = np.array([hg_constants(g) for g in table[:, 2]]).reshape(-1, 3)
    return np.column_stack([table, inv_mus, n / C_MM_PER_NS, C_MM_PER_NS / n, hg])


def hg_constants(g: float) -> Tuple[float, float, float]:
    """(1 - g^2, 1 + g^2, 1/(2g)) as used by the phase-function sampler (0 for tiny g)."""
    g2 = g * g
    return 1.0 - g2, 1.0 + g2, (0.5 / g if abs(g) >= ISO_G_EPS else 0.0)


class StepKind(enum.IntEnum):
    SCATTERED = K_SCATTERED
    CROSSED_VOXEL = K_CROSSED
    EXITED_DOMAIN = K_EXITED
    REFLECTED = K_REFLECTED
    TERMINATED = K_TERMINATED


# ---------------------------------------------------------------- compiled core
# Helpers pass photon state as scalars so LLVM keeps it in registers; the
# batch kernel and the Python step API share them.

_jit = dict(cache=True, nogil=True, error_model="numpy")
_inline = dict(_jit, inline="always")


@njit(**_inline)
def _recip(u):
    return 1.0 / u if u != 0.0 else np.inf


@njit(**_inline)
def _axis_distance(p, u, r, i, vs):
    # r is 1/u, carried alongside the direction so crossings avoid divisions
    if u > 0.0:
        t = ((i + 1) * vs - p) * r
    elif u < 0.0:
        t = (i * vs - p) * r
    else:
        return np.inf
    return t if t > 0.0 else 0.0


@njit(**_inline)
def _boundary_distance(x, y, z, dx, dy, dz, rx, ry, rz, ix, iy, iz, vs):
    """Distance to the nearest face of voxel (ix, iy, iz) and the axis it is normal to."""
    best = _axis_distance(x, dx, rx, ix, vs)
    axis = 0
    t = _axis_distance(y, dy, ry, iy, vs)
    if t < best:
        best = t
        axis = 1
    t = _axis_distance(z, dz, rz, iz, vs)
    if t < best:
        best = t
        axis = 2
    return best, axis


@njit(**_inline)
def _hg_cos(g, a, b, c, xi):
    # a, b, c = hg_constants(g), precomputed per medium
    if abs(g) < ISO_G_EPS:
        return 2.0 * xi - 1.0
    s = a / (1.0 - g + 2.0 * g * xi)
    ct = (b - s * s) * c
    if ct > 1.0:
        return 1.0
    if ct < -1.0:
        return -1.0
    return ct


@njit(**_inline)
def hg_cos_theta(g, xi):
    """Inverse CDF of the Henyey-Greenstein phase function."""
    g2 = g * g
    c = 0.5 / g if abs(g) >= ISO_G_EPS else 0.0
    return _hg_cos(g, 1.0 - g2, 1.0 + g2, c, xi)


@njit(**_inline)
def sincos_turn(xi):
    """(cos, sin) of 2*pi*xi.

    The quadrant is split off exactly in turn units and the remainder, at most
    pi/4 in magnitude, goes through Taylor polynomials accurate to about one
    ulp. This is several times cheaper than the libm call for the azimuth.
    """
    q = xi * 4.0
    k = math.floor(q + 0.5)
    r = (q - k) * _HALF_PI
    r2 = r * r
    c = 1.0 + r2 * (-1.0 / 2 + r2 * (1.0 / 24 + r2 * (-1.0 / 720 + r2 * (
        1.0 / 40320 + r2 * (-1.0 / 3628800 + r2 * (1.0 / 479001600 + r2 * (
            -1.0 / 87178291200 + r2 * (1.0 / 20922789888000))))))))
    sn = r * (1.0 + r2 * (-1.0 / 6 + r2 * (1.0 / 120 + r2 * (-1.0 / 5040 + r2 * (
        1.0 / 362880 + r2 * (-1.0 / 39916800 + r2 * (1.0 / 6227020800 + r2 * (
            -1.0 / 1307674368000 + r2 * (1.0 / 355687428096000)))))))))
    quadrant = int(k) & 3
    if quadrant == 0:
        return c, sn
    if quadrant == 1:
        return -sn, c
    if quadrant == 2:
        return -c, -sn
    return sn, -c


@njit(**_inline)
def _rotate(ux, uy, uz, cost, xi_phi):
    """Deflect (ux, uy, uz) by polar cosine ``cost`` and azimuth 2*pi*xi_phi."""
    sint = math.sqrt(max(0.0, 1.0 - cost * cost))
    cosp, sinp = sincos_turn(xi_phi)
    if abs(uz) > 1.0 - 1e-12:
        nx = sint * cosp
        ny = sint * sinp
        nz = cost if uz > 0.0 else -cost
    else:
        tmp = math.sqrt(1.0 - uz * uz)
        f = sint / tmp
        nx = f * (ux * uz * cosp - uy * sinp) + ux * cost
        ny = f * (uy * uz * cosp + ux * sinp) + uy * cost
        nz = -sint * cosp * tmp + uz * cost
    norm2 = nx * nx + ny * ny + nz * nz
    if abs(norm2 - 1.0) > 1e-12:
        inv = 1.0 / math.sqrt(norm2)
        nx *= inv
        ny *= inv
        nz *= inv
    return nx, ny, nz


@njit(**_inline)
def _scatter(ux, uy, uz, g, a, b, c, rng):
    cost = _hg_cos(g, a, b, c, next_float(rng))
    return _rotate(ux, uy, uz, cost, next_float(rng))


@njit(**_inline)
def fresnel_reflectance(n1, n2, cos_i):
    """Unpolarized Fresnel reflectance; 1.0 under total internal reflection."""
    if n1 == n2:
        return 0.0
    sin_t2 = (n1 / n2) ** 2 * max(0.0, 1.0 - cos_i * cos_i)
    if sin_t2 >= 1.0:
        return 1.0
    cos_t = math.sqrt(1.0 - sin_t2)
    rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    rp = (n1 * cos_t - n2 * cos_i) / (n1 * cos_t + n2 * cos_i)
    return 0.5 * (rs * rs + rp * rp)


@njit(**_inline)
def _interface(u, v1, v2, n1, n2, next_exterior, reflect, rng):
    """Photon on a face; ``u`` is the direction component along the face normal.

    Returns (kind, u, v1, v2, crossed) where v1, v2 are the tangential
    components and ``crossed`` tells the caller to step into the next voxel.
    """
    if not reflect or n1 == n2:
        if next_exterior:
            return K_EXITED, u, v1, v2, False
        return K_CROSSED, u, v1, v2, True
    cos_i = abs(u)
    ratio = n1 / n2
    sin_t2 = ratio * ratio * (1.0 - cos_i * cos_i)
    if sin_t2 > 1.0:
        return K_REFLECTED, -u, v1, v2, False
    if next_float(rng) < fresnel_reflectance(n1, n2, cos_i):
        return K_REFLECTED, -u, v1, v2, False
    cos_t = math.sqrt(max(0.0, 1.0 - sin_t2))
    u = cos_t if u > 0.0 else -cos_t
    if next_exterior:
        return K_EXITED, u, v1 * ratio, v2 * ratio, False
    return K_CROSSED, u, v1 * ratio, v2 * ratio, True


@njit(**_inline)
def _advance(x, y, z, dx, dy, dz, rx, ry, rz, w, t, rem, ix, iy, iz, med,
             labels, nx, ny, nz, vs, media, reflect, tmax, rng):
    """One free-flight segment; (rx, ry, rz) are the reciprocal direction components.

    Returns (kind, deposited, flat voxel of the deposit, new state...).
    """
    mua = media[med, M_MUA]
    mus = media[med, M_MUS]
    nidx = media[med, M_N]
    db, axis = _boundary_distance(x, y, z, dx, dy, dz, rx, ry, rz, ix, iy, iz, vs)
    ds = rem * media[med, M_INV_MUS] if mus > 0.0 else np.inf
    scatter = ds <= db
    d = ds if scatter else db
    left = (tmax - t) * media[med, M_C_OVER_N]
    truncated = d > left
    if truncated:
        d = max(left, 0.0)
    dep = 0.0
    if mua > 0.0 and d > 0.0:
        dep = w * _absorbed_fraction(mua * d)
        w = w - dep
    vflat = ix + nx * (iy + ny * iz)
    x += d * dx
    y += d * dy
    z += d * dz
    t += d * media[med, M_N_OVER_C]
    if truncated:
        return K_TERMINATED, dep, vflat, x, y, z, dx, dy, dz, rx, ry, rz, w, t, rem, ix, iy, iz, med
    if scatter:
        dx, dy, dz = _scatter(dx, dy, dz, media[med, M_G], media[med, M_HG_A],
                              media[med, M_HG_B], media[med, M_HG_C], rng)
        rem = -math.log(1.0 - next_float(rng))
        return (K_SCATTERED, dep, vflat, x, y, z, dx, dy, dz, _recip(dx), _recip(dy), _recip(dz),
                w, t, rem, ix, iy, iz, med)
    rem = max(0.0, rem - d * mus)
    jx = ix
    jy = iy
    jz = iz
    if axis == 0:
        x = (ix + 1) * vs if dx > 0.0 else ix * vs
        jx = ix + 1 if dx > 0.0 else ix - 1
        exterior = jx < 0 or jx >= nx
    elif axis == 1:
        y = (iy + 1) * vs if dy > 0.0 else iy * vs
        jy = iy + 1 if dy > 0.0 else iy - 1
        exterior = jy < 0 or jy >= ny
    else:
        z = (iz + 1) * vs if dz > 0.0 else iz * vs
        jz = iz + 1 if dz > 0.0 else iz - 1
        exterior = jz < 0 or jz >= nz
    label = 0
    if not exterior:
        label = labels[jx + nx * (jy + ny * jz)]
        exterior = label == 0
    n2 = media[label, M_N]
    if axis == 0:
        kind, dx, dy, dz, crossed = _interface(dx, dy, dz, nidx, n2, exterior, reflect, rng)
    elif axis == 1:
        kind, dy, dx, dz, crossed = _interface(dy, dx, dz, nidx, n2, exterior, reflect, rng)
    else:
        kind, dz, dx, dy, crossed = _interface(dz, dx, dy, nidx, n2, exterior, reflect, rng)
    if crossed:
        ix = jx
        iy = jy
        iz = jz
        med = label
    if reflect and nidx != n2:
        rx = _recip(dx)
        ry = _recip(dy)
        rz = _recip(dz)
    return kind, dep, vflat, x, y, z, dx, dy, dz, rx, ry, rz, w, t, rem, ix, iy, iz, med


@njit(**_inline)
def _absorbed_fraction(x):
    """1 - exp(-x) for x >= 0; a short series below 0.01 keeps full precision."""
    if x < 0.01:
        return x * (1.0 - x * (1.0 / 2 - x * (1.0 / 6 - x * (1.0 / 24 - x * (
            1.0 / 120 - x * (1.0 / 720 - x * (1.0 / 5040)))))))
    return -math.expm1(-x)


@njit(**_inline)
def _launch(pidx, seed, src_kind, src, labels, nx, ny, nz, vs, rng):
    """Initial state of photon ``pidx``; ``ok`` is False if it starts outside the domain."""
    seed_state(seed, pidx, rng)
    if src_kind == SRC_ISOTROPIC:
        cost = 2.0 * next_float(rng) - 1.0
        cosp, sinp = sincos_turn(next_float(rng))
        sint = math.sqrt(max(0.0, 1.0 - cost * cost))
        dx = sint * cosp
        dy = sint * sinp
        dz = cost
    else:
        dx = src[3]
        dy = src[4]
        dz = src[5]
    x = src[0] + LAUNCH_NUDGE * dx
    y = src[1] + LAUNCH_NUDGE * dy
    z = src[2] + LAUNCH_NUDGE * dz
    ix = int(math.floor(x / vs))
    iy = int(math.floor(y / vs))
    iz = int(math.floor(z / vs))
    ok = 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz
    med = 0
    if ok:
        med = labels[ix + nx * (iy + ny * iz)]
        ok = med != 0
    rem = -math.log(1.0 - next_float(rng))
    return ok, x, y, z, dx, dy, dz, 1.0, 0.0, rem, ix, iy, iz, med


def _record(buf, v, dep, scale, nlog):
    """Add ``dep`` to voxel ``v`` of the deposit sink ``buf``."""


def _result(buf, steps, nlog):
    pass


@overload(_record, inline="always", jit_options=_jit)
def _ov_record(buf, v, dep, scale, nlog):
    # the sink is chosen by type so each kernel variant compiles only its own path:
    #   int64 array            fixed-point ticks (private accumulation)
    #   float64 array          atomic adds into a shared buffer
    #   (int64, int64) tuple   ticks plus per-voxel deposit counts
    #   (int64, float64) tuple ordered (voxel, weight) log of one photon
    if isinstance(buf, types.Array) and buf.dtype == types.int64:
        def impl(buf, v, dep, scale, nlog):
            buf[v] += np.int64(dep * scale + 0.5)
            return nlog
    elif isinstance(buf, types.Array):
        def impl(buf, v, dep, scale, nlog):
            atomic_add_f64(buf, v, dep)
            return nlog
    elif buf[1].dtype == types.int64:
        def impl(buf, v, dep, scale, nlog):
            buf[0][v] += np.int64(dep * scale + 0.5)
            buf[1][v] += 1
            return nlog
    else:
        def impl(buf, v, dep, scale, nlog):
            if nlog < buf[0].shape[0]:
                buf[0][nlog] = v
                buf[1][nlog] = dep
            return nlog + 1
    return impl


@overload(_result, inline="always", jit_options=_jit)
def _ov_result(buf, steps, nlog):
    if isinstance(buf, types.BaseTuple) and buf[1].dtype == types.float64:
        return lambda buf, steps, nlog: nlog
    return lambda buf, steps, nlog: steps


@njit(**_inline)
def _simulate_one(pidx, seed, src_kind, src, labels, dims, vs, media, params,
                  rng, buf, tallies):
    """Full random walk of one photon; returns its segment count (log length when logging).

    Consecutive crossings between voxels of the same label are walked with
    incremental per-axis face distances, so a crossing costs one comparison,
    one exponential and one deposit. Each flight ends at a scatter, at the
    time limit or on a face where the label changes, and the physics there
    matches ``_advance`` segment for segment.
    """
    nx = dims[0]
    ny = dims[1]
    nz = dims[2]
    ok, x, y, z, dx, dy, dz, w, t, rem, ix, iy, iz, med = _launch(
        pidx, seed, src_kind, src, labels, nx, ny, nz, vs, rng)
    if not ok:
        tallies[T_LAUNCH_FAIL] += 1.0
        return 0
    reflect = params[0] > 0.5
    tmax = params[1]
    thr = params[2]
    mult = params[3]
    scale = params[4]
    deposited = 0.0
    escaped = 0.0
    killed = 0.0
    truncated = 0.0
    steps = 0
    nlog = 0
    while True:
        mua = media[med, M_MUA]
        mus = media[med, M_MUS]
        ds = rem * media[med, M_INV_MUS] if mus > 0.0 else np.inf
        left = max((tmax - t) * media[med, M_C_OVER_N], 0.0)
        scatter = ds <= left
        stop = ds if scatter else left
        sx = 1 if dx > 0.0 else -1
        sy = 1 if dy > 0.0 else -1
        sz = 1 if dz > 0.0 else -1
        rx = _recip(dx)
        ry = _recip(dy)
        rz = _recip(dz)
        tx = _axis_distance(x, dx, rx, ix, vs)
        ty = _axis_distance(y, dy, ry, iy, vs)
        tz = _axis_distance(z, dz, rz, iz, vs)
        ddx = vs * abs(rx)
        ddy = vs * abs(ry)
        ddz = vs * abs(rz)
        v = ix + nx * (iy + ny * iz)
        w0 = w
        s = 0.0
        face = False
        axis = 0
        label = med
        while True:
            steps += 1
            if tx <= ty and tx <= tz:
                axis = 0
                tn = tx
            elif ty <= tz:
                axis = 1
                tn = ty
            else:
                axis = 2
                tn = tz
            if tn >= stop:
                tn = stop
            if mua > 0.0 and tn > s:
                dep = w * _absorbed_fraction(mua * (tn - s))
                w -= dep
                nlog = _record(buf, v, dep, scale, nlog)
            s = tn
            if s >= stop:
                break
            face = True
            if axis == 0:
                ix += sx
                if ix < 0 or ix >= nx:
                    label = 0
                    break
                v += sx
                tx += ddx
            elif axis == 1:
                iy += sy
                if iy < 0 or iy >= ny:
                    label = 0
                    break
                v += sy * nx
                ty += ddy
            else:
                iz += sz
                if iz < 0 or iz >= nz:
                    label = 0
                    break
                v += sz * nx * ny
                tz += ddz
            label = labels[v]
            if label != med:
                break
            face = False
        deposited += w0 - w
        x += s * dx
        y += s * dy
        z += s * dz
        t += s * media[med, M_N_OVER_C]
        if not face:
            if not scatter:
                truncated += w
                break
            dx, dy, dz = _scatter(dx, dy, dz, media[med, M_G], media[med, M_HG_A],
                                  media[med, M_HG_B], media[med, M_HG_C], rng)
            rem = -math.log(1.0 - next_float(rng))
            if w < thr:
                if next_float(rng) * mult < 1.0:
                    killed -= w * (mult - 1.0)
                    w *= mult
                else:
                    killed += w
                    break
            continue
        rem = max(0.0, rem - s * mus)
        n1 = media[med, M_N]
        n2 = media[label, M_N]
        exterior = label == 0
        # ix/iy/iz already point at the next voxel; snap onto the shared face
        if axis == 0:
            x = (ix if sx > 0 else ix + 1) * vs
            kind, dx, dy, dz, crossed = _interface(dx, dy, dz, n1, n2, exterior, reflect, rng)
            if not crossed:
                ix -= sx
        elif axis == 1:
            y = (iy if sy > 0 else iy + 1) * vs
            kind, dy, dx, dz, crossed = _interface(dy, dx, dz, n1, n2, exterior, reflect, rng)
            if not crossed:
                iy -= sy
        else:
            z = (iz if sz > 0 else iz + 1) * vs
            kind, dz, dx, dy, crossed = _interface(dz, dx, dy, n1, n2, exterior, reflect, rng)
            if not crossed:
                iz -= sz
        if kind == K_EXITED:
            escaped += w
            break
        if crossed:
            med = label
    tallies[T_DEPOSITED] += deposited
    tallies[T_ESCAPED] += escaped
    tallies[T_KILLED] += killed
    tallies[T_TRUNCATED] += truncated
    tallies[T_PHOTONS] += 1.0
    tallies[T_STEPS] += steps
    return _result(buf, steps, nlog)


@njit(**_jit)
def run_range(start, stop, seed, src_kind, src, labels, dims, vs, media, params,
              buf, tallies, costs):
    """Simulate photons ``start..stop-1``; per-photon segment counts go to ``costs`` if sized.

    ``buf`` is the deposit sink: an int64 tick buffer (private accumulation)
    or a float64 buffer updated with atomic adds (shared accumulation).
    """
    rng = np.zeros(2, dtype=np.uint64)
    record = costs.shape[0] >= stop - start
    for k in range(start, stop):
        n = _simulate_one(np.uint64(k), seed, src_kind, src, labels, dims, vs, media, params,
                          rng, buf, tallies)
        if record:
            costs[k - start] = n


@njit(**_jit)
def run_claimed(counter, quota, base, seed, src_kind, src, labels, dims, vs, media, params,
                buf, tallies):
    """Claim photons from a shared counter until the quota is exhausted.

    Each successful claim of ``r`` (the counter value before decrement) maps
    to global photon index ``base + quota - r``; returns the number simulated.
    """
    rng = np.zeros(2, dtype=np.uint64)
    done = 0
    while True:
        r = atomic_dec_if_positive(counter, 0)
        if r <= 0:
            break
        _simulate_one(np.uint64(base + quota - r), seed, src_kind, src, labels, dims, vs,
                      media, params, rng, buf, tallies)
        done += 1
    return done


@njit(**_jit)
def run_single_logged(pidx, seed, src_kind, src, labels, dims, vs, media, params,
                      vlog, dlog, tallies):
    rng = np.zeros(2, dtype=np.uint64)
    return _simulate_one(np.uint64(pidx), seed, src_kind, src, labels, dims, vs, media, params,
                         rng, (vlog, dlog), tallies)


@njit(**_jit)
def _advance_once(s, iv, labels, dims, vs, media, reflect, tmax, rng):
    """Array-in/array-out wrapper around ``_advance`` for the Python API."""
    kind, dep, v, x, y, z, dx, dy, dz, rx, ry, rz, w, t, rem, ix, iy, iz, med = _advance(
        s[0], s[1], s[2], s[3], s[4], s[5], _recip(s[3]), _recip(s[4]), _recip(s[5]),
        s[6], s[7], s[8], iv[0], iv[1], iv[2], iv[3],
        labels, dims[0], dims[1], dims[2], vs, media, reflect, tmax, rng)
    s[0] = x
    s[1] = y
    s[2] = z
    s[3] = dx
    s[4] = dy
    s[5] = dz
    s[6] = w
    s[7] = t
    s[8] = rem
    iv[0] = ix
    iv[1] = iy
    iv[2] = iz
    iv[3] = med
    return kind, dep, v


@njit(**_jit)
def _interface_once(u, v1, v2, n1, n2, next_exterior, reflect, rng):
    return _interface(u, v1, v2, n1, n2, next_exterior, reflect, rng)


@njit(**_jit)
def _sincos_once(xi):
    return sincos_turn(xi)


@njit(**_jit)
def _scatter_once(ux, uy, uz, g, rng):
    g2 = g * g
    c = 0.5 / g if abs(g) >= ISO_G_EPS else 0.0
    return _scatter(ux, uy, uz, g, 1.0 - g2, 1.0 + g2, c, rng)


@njit(**_jit)
def _scatter_chain(ux, uy, uz, g, rng, cosines):
    g2 = g * g
    c = 0.5 / g if abs(g) >= ISO_G_EPS else 0.0
    for i in range(cosines.shape[0]):
        nx, ny, nz = _scatter(ux, uy, uz, g, 1.0 - g2, 1.0 + g2, c, rng)
        cosines[i] = ux * nx + uy * ny + uz * nz
        ux, uy, uz = nx, ny, nz
    return ux, uy, uz


@njit(**_jit)
def _distance_once(x, y, z, dx, dy, dz, ix, iy, iz, vs):
    return _boundary_distance(x, y, z, dx, dy, dz, _recip(dx), _recip(dy), _recip(dz),
                              ix, iy, iz, vs)


@njit(**_jit)
def _launch_once(pidx, seed, src_kind, src, labels, dims, vs, rng):
    return _launch(pidx, seed, src_kind, src, labels, dims[0], dims[1], dims[2], vs, rng)


@njit(**_jit)
def _trace(x, y, z, dx, dy, dz, ix, iy, iz, dims, vs, vout, lout):
    n = 0
    rx = _recip(dx)
    ry = _recip(dy)
    rz = _recip(dz)
    while True:
        db, axis = _boundary_distance(x, y, z, dx, dy, dz, rx, ry, rz, ix, iy, iz, vs)
        if n < vout.shape[0]:
            vout[n] = ix + dims[0] * (iy + dims[1] * iz)
            lout[n] = db
        n += 1
        x += db * dx
        y += db * dy
        z += db * dz
        if axis == 0:
            x = (ix + 1) * vs if dx > 0.0 else ix * vs
            ix += 1 if dx > 0.0 else -1
            if ix < 0 or ix >= dims[0]:
                return n
        elif axis == 1:
            y = (iy + 1) * vs if dy > 0.0 else iy * vs
            iy += 1 if dy > 0.0 else -1
            if iy < 0 or iy >= dims[1]:
                return n
        else:
            z = (iz + 1) * vs if dz > 0.0 else iz * vs
            iz += 1 if dz > 0.0 else -1
            if iz < 0 or iz >= dims[2]:
                return n


# ---------------------------------------------------------------- packing


class KernelScene(NamedTuple):
    """Flat arrays handed to the compiled kernels."""

    src_kind: int
    src: np.ndarray
    labels: np.ndarray
    dims: np.ndarray
    voxel_size: float
    media: np.ndarray
    params: np.ndarray
    seed: np.uint64


def pack(scene: Scene, config: SimulationConfig) -> KernelScene:
    grid = scene.grid
    if isinstance(scene.source, IsotropicSource):
        kind = SRC_ISOTROPIC
        src = np.array(list(scene.source.position) + [0.0, 0.0, 1.0])
    else:
        kind = SRC_PENCIL
        src = np.array(list(scene.source.position) + list(scene.source.direction))
    reflect = 1.0 if config.boundary_mode is BoundaryMode.REFLECT_AT_MISMATCH else 0.0
    params = np.array([reflect, config.tmax, config.roulette_threshold,
                       float(config.roulette_multiplier), tick_scale(config.photon_count)])
    return KernelScene(kind, src, np.ascontiguousarray(grid.flat_labels()),
                       np.array(grid.dims, dtype=np.int64), grid.voxel_size,
                       kernel_media(grid), params,
                       np.uint64(config.master_seed & 0xFFFFFFFFFFFFFFFF))


# ---------------------------------------------------------------- Python API


@dataclass(frozen=True)
class PhotonState:
    position: Vec3
    direction: Vec3
    weight: float
    time: float
    medium: int
    remaining_scat: float
    voxel: Index3

    def _arrays(self):
        st = np.array(list(self.position) + list(self.direction)
                      + [self.weight, self.time, self.remaining_scat])
        iv = np.array(list(self.voxel) + [self.medium], dtype=np.int64)
        return st, iv

    @classmethod
    def _from_arrays(cls, st, iv) -> "PhotonState":
        return cls(tuple(float(v) for v in st[0:3]), tuple(float(v) for v in st[3:6]),
                   float(st[6]), float(st[7]), int(iv[3]), float(st[8]),
                   (int(iv[0]), int(iv[1]), int(iv[2])))


@dataclass(frozen=True)
class StepOutcome:
    kind: StepKind
    deposited: float = 0.0
    voxel: Optional[Index3] = None


@dataclass
class PhotonRecord:
    """Everything one photon left behind."""

    deposits: List[Tuple[Index3, float]]
    escaped: float
    killed: float
    truncated: float
    steps: int

    @property
    def total_deposited(self) -> float:
        return math.fsum(dw for _, dw in self.deposits)

    def balance(self) -> float:
        return self.total_deposited + self.escaped + self.killed + self.truncated


def _unflatten(v: int, dims) -> Index3:
    nx, ny, _ = dims
    return (int(v % nx), int((v // nx) % ny), int(v // (nx * ny)))


def launch(source: Source, stream: RngStream, grid: VoxelGrid) -> PhotonState:
    """Start a photon at ``source``, consuming draws from ``stream``."""
    kind = SRC_ISOTROPIC if isinstance(source, IsotropicSource) else SRC_PENCIL
    direction = getattr(source, "direction", (0.0, 0.0, 1.0))
    # _launch reseeds from (seed, pidx); feed it this stream's state instead
    rng = stream.state
    if kind == SRC_ISOTROPIC:
        cost = 2.0 * float(next_float(rng)) - 1.0
        cosp, sinp = _sincos_once(float(next_float(rng)))
        sint = math.sqrt(max(0.0, 1.0 - cost * cost))
        direction = (sint * cosp, sint * sinp, cost)
    pos = tuple(p + LAUNCH_NUDGE * d for p, d in zip(source.position, direction))
    vox = voxel_of(pos, grid)
    if vox is None or grid.label_at(vox) == 0:
        raise SourceOutsideDomain(f"source {source.position} does not enter the domain")
    rem = -math.log(1.0 - float(next_float(rng)))
    return PhotonState(pos, tuple(float(d) for d in direction), 1.0, 0.0,
                       grid.label_at(vox), rem, vox)


def distance_to_voxel_boundary(position: Sequence[float], direction: Sequence[float],
                               grid: VoxelGrid) -> float:
    """Distance along ``direction`` to the nearest face of the voxel holding ``position``.

    Returns 0 when the point sits on a lower face it is moving out through.
    """
    vox = voxel_of(position, grid)
    if vox is None:
        raise ValueError(f"position {position} lies outside the grid")
    d, _ = _distance_once(*map(float, position), *map(float, direction), *vox, grid.voxel_size)
    return float(d)


def hg_scatter(direction: Sequence[float], g: float, stream: RngStream) -> Vec3:
    return tuple(float(v) for v in _scatter_once(*map(float, direction), float(g), stream.state))


def scatter_chain(direction: Sequence[float], g: float, stream: RngStream,
                  n: int) -> Tuple[np.ndarray, Vec3]:
    """Apply ``n`` consecutive HG scatters; returns the deflection cosines and final direction."""
    cosines = np.empty(int(n))
    final = _scatter_chain(*map(float, direction), float(g), stream.state, cosines)
    return cosines, tuple(float(v) for v in final)


def advance(photon: PhotonState, grid: VoxelGrid, config: SimulationConfig,
            stream: RngStream) -> Tuple[PhotonState, StepOutcome]:
    st, iv = photon._arrays()
    reflect = config.boundary_mode is BoundaryMode.REFLECT_AT_MISMATCH
    kind, dep, v = _advance_once(st, iv, np.ascontiguousarray(grid.flat_labels()),
                                 np.array(grid.dims, dtype=np.int64), grid.voxel_size,
                                 kernel_media(grid), reflect, config.tmax, stream.state)
    return PhotonState._from_arrays(st, iv), StepOutcome(StepKind(kind), float(dep),
                                                         _unflatten(v, grid.dims))


def handle_interface(photon: PhotonState, n1: float, n2: float, face_normal: Sequence[float],
                     config: SimulationConfig, stream: RngStream,
                     next_medium: Optional[int] = None) -> Tuple[PhotonState, StepOutcome]:
    """Resolve a photon standing on an axis-aligned voxel face.

    ``next_medium=None`` means the far side is the exterior. ``face_normal``
    only selects the axis; the crossing side follows the photon's direction.
    """
    normal = np.abs(np.asarray(face_normal, dtype=float))
    axis = int(np.argmax(normal))
    if not math.isclose(normal[axis], 1.0, abs_tol=1e-9):
        raise ValueError("voxel faces have axis-aligned normals")
    d = list(photon.direction)
    u = d[axis]
    if u == 0.0:
        raise ValueError("photon moves parallel to the face")
    tangential = [b for b in range(3) if b != axis]
    reflect = config.boundary_mode is BoundaryMode.REFLECT_AT_MISMATCH
    exterior = next_medium is None
    kind, u, v1, v2, crossed = _interface_once(u, d[tangential[0]], d[tangential[1]],
                                               float(n1), float(n2), exterior, reflect,
                                               stream.state)
    d[axis], d[tangential[0]], d[tangential[1]] = u, v1, v2
    voxel = list(photon.voxel)
    medium = photon.medium
    if crossed:
        voxel[axis] += 1 if u > 0.0 else -1
        medium = int(next_medium)
    state = replace(photon, direction=tuple(float(c) for c in d), voxel=tuple(voxel),
                    medium=medium)
    return state, StepOutcome(StepKind(kind))


def roulette(photon: PhotonState, config: SimulationConfig,
             stream: RngStream) -> Optional[PhotonState]:
    """Russian roulette for a low-weight photon; None means it was killed."""
    if photon.weight >= config.roulette_threshold:
        return photon
    m = config.roulette_multiplier
    if float(next_float(stream.state)) * m < 1.0:
        return replace(photon, weight=photon.weight * m)
    return None


def simulate_photon(photon_index: int, scene: Scene, config: SimulationConfig) -> PhotonRecord:
    ks = pack(scene, config)
    cap = 4096
    while True:
        vlog = np.zeros(cap, dtype=np.int64)
        dlog = np.zeros(cap)
        tallies = np.zeros(N_TALLIES)
        n = run_single_logged(photon_index, ks.seed, ks.src_kind, ks.src, ks.labels, ks.dims,
                              ks.voxel_size, ks.media, ks.params, vlog, dlog, tallies)
        if tallies[T_LAUNCH_FAIL]:
            raise SourceOutsideDomain(f"source {scene.source.position} does not enter the domain")
        if n <= cap:
            break
        cap = 2 * n
    dims = scene.grid.dims
    deposits = [(_unflatten(v, dims), float(d)) for v, d in zip(vlog[:n], dlog[:n])]
    return PhotonRecord(deposits, float(tallies[T_ESCAPED]), float(tallies[T_KILLED]),
                        float(tallies[T_TRUNCATED]), int(tallies[T_STEPS]))


def trace_ray(origin: Sequence[float], direction: Sequence[float],
              grid: VoxelGrid) -> List[Tuple[Index3, float]]:
    """Exact per-voxel path lengths of a straight ray until it leaves the grid."""
    vox = voxel_of(origin, grid)
    if vox is None:
        raise ValueError("origin lies outside the grid")
    cap = int(sum(grid.dims)) + 8
    vout = np.zeros(cap, dtype=np.int64)
    lout = np.zeros(cap)
    n = _trace(*map(float, origin), *map(float, direction), *vox,
               np.array(grid.dims, dtype=np.int64), grid.voxel_size, vout, lout)
    n = min(n, cap)
    return [(_unflatten(v, grid.dims), float(l)) for v, l in zip(vout[:n], lout[:n])]
