"""Photon scheduling inside a worker group and across heterogeneous devices.

Within a group, threads claim photons from a shared counter (dynamic) or
take fixed contiguous blocks (static). Across devices, photons are split by
core count (S1), by calibrated throughput 1/a (S2) or by minimizing the
modeled makespan under T = a*n + t0 (S3). Every device receives a contiguous
range of global photon indices, and photon k always draws from stream k, so
the merged fluence does not depend on how the work was divided.
"""
from __future__ import annotations

import enum
import heapq
import json
import math
import os
import threading
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numba import njit

from ._atomic import dec_if_positive
from .accumulator import FluenceMap, merge
from .domain import AccumulationMode, Scene, SimulationConfig
from .errors import NonPositiveSlope, UncalibratedDevice, ValidationError
from .transport import N_TALLIES, pack, run_claimed, run_range


class DeviceKind(enum.Enum):
    REAL = "real"
    SIMULATED = "simulated"


class Strategy(enum.Enum):
    S1 = "s1"
    S2 = "s2"
    S3 = "s3"


@dataclass(frozen=True)
class DeviceProfile:
    """A compute device and its runtime model T(n) = a*n + t0 (ms).

    Real devices are pools of CPU threads running the kernel. Simulated
    devices run the same physics but report the modeled time, optionally
    with lognormal per-photon cost jitter.
    """

    name: str
    cores: int
    a: Optional[float] = None
    t0: Optional[float] = None
    kind: DeviceKind = DeviceKind.SIMULATED
    jitter_sigma: float = 0.0
    threads: Optional[int] = None

    def __post_init__(self):
        if int(self.cores) != self.cores or self.cores < 1:
            raise ValidationError(f"device {self.name!r}: cores must be an integer >= 1")
        if self.a is not None and not self.a > 0:
            raise ValidationError(f"device {self.name!r}: a must be > 0, got {self.a}")
        if self.t0 is not None and not self.t0 >= 0:
            raise ValidationError(f"device {self.name!r}: t0 must be >= 0, got {self.t0}")
        if not self.jitter_sigma >= 0:
            raise ValidationError(f"device {self.name!r}: jitter_sigma must be >= 0")
        if self.threads is not None and (int(self.threads) != self.threads or self.threads < 1):
            raise ValidationError(f"device {self.name!r}: threads must be an integer >= 1")
        if self.kind is DeviceKind.SIMULATED and not self.calibrated:
            raise ValidationError(f"simulated device {self.name!r} needs both a and t0")

    @property
    def calibrated(self) -> bool:
        return self.a is not None and self.t0 is not None

    def with_calibration(self, a: float, t0: float) -> "DeviceProfile":
        return replace(self, a=float(a), t0=float(t0))

    def model_time(self, n: int) -> float:
        """Modeled wall time in ms; an idle device costs nothing."""
        _require_calibrated([self])
        return self.a * n + self.t0 if n > 0 else 0.0

    def worker_count(self) -> int:
        return int(self.threads) if self.threads else thread_count_heuristic(self.cores)


def _require_calibrated(devices: Sequence[DeviceProfile]) -> None:
    for d in devices:
        if not d.calibrated:
            raise UncalibratedDevice(f"device {d.name!r} has no (a, t0); run calibrate first")


@dataclass(frozen=True)
class Partition:
    counts: Tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValidationError(f"partition counts must be >= 0, got {counts}")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def ranges(self, base: int = 0) -> List[Tuple[int, int]]:
        """Contiguous [start, stop) photon-index ranges in device order."""
        out = []
        start = base
        for c in self.counts:
            out.append((start, start + c))
            start += c
        return out


class GroupCounter:
    """A workgroup's remaining photon quota, claimed by atomic decrement-if-positive."""

    def __init__(self, quota: int):
        if quota < 0:
            raise ValidationError("quota must be >= 0")
        self.quota = int(quota)
        self.buffer = np.array([quota], dtype=np.int64)

    @property
    def remaining(self) -> int:
        return int(self.buffer[0])

    def claim(self) -> Optional[int]:
        """Offset of the claimed photon within the quota, or None when exhausted."""
        r = dec_if_positive(self.buffer, 0)
        return self.quota - int(r) if r > 0 else None


def thread_count_heuristic(cores: int, max_concurrent_per_core: int = 1) -> int:
    """Worker-pool size: concurrent threads per compute unit times compute units."""
    if cores < 1 or max_concurrent_per_core < 1:
        raise ValidationError("cores and max_concurrent_per_core must be >= 1")
    return int(cores) * int(max_concurrent_per_core)


# ---------------------------------------------------------------- workgroups


@dataclass
class GroupResult:
    fluence: FluenceMap
    per_thread: Tuple[int, ...]
    tallies: np.ndarray
    wall_ms: float
    costs: Optional[np.ndarray] = None  # segments per photon, in photon order (static runs)

    @property
    def photons(self) -> int:
        return sum(self.per_thread)


class _Buffers:
    """Per-thread deposit sinks for one group."""

    def __init__(self, nvox: int, threads: int, config: SimulationConfig, count_hits: bool,
                 shared: Optional[np.ndarray] = None):
        self.private = config.accumulation_mode is AccumulationMode.PRIVATE_MERGE
        self.count_hits = count_hits
        if self.private:
            self.ticks = [np.zeros(nvox, dtype=np.int64) for _ in range(threads)]
            self.hits = [np.zeros(nvox, dtype=np.int64) for _ in range(threads)] if count_hits else None
        else:
            if count_hits:
                raise ValidationError("deposit counting is only available with private accumulation")
            self.shared = np.zeros(nvox) if shared is None else shared
        self.tallies = [np.zeros(N_TALLIES) for _ in range(threads)]

    def sink(self, i: int):
        if not self.private:
            return self.shared
        if self.count_hits:
            return (self.ticks[i], self.hits[i])
        return self.ticks[i]

    def fluence(self, dims, photons: int, scale: float, own_shared: bool = True) -> FluenceMap:
        if self.private:
            maps = [FluenceMap.from_ticks(dims, t, 0, scale,
                                          self.hits[i] if self.hits else None)
                    for i, t in enumerate(self.ticks)]
            out = merge(maps)
            out.photon_count = photons
            return out
        return FluenceMap.from_shared(dims, self.shared if own_shared else self.shared.copy(),
                                      photons)

    def total_tallies(self) -> np.ndarray:
        out = np.zeros(N_TALLIES)
        for t in self.tallies:
            out += t
        return out


def _run_threads(target: Callable[[int], None], threads: int) -> None:
    if threads == 1:
        target(0)
        return
    errors = []

    def wrapped(i):
        try:
            target(i)
        except BaseException as exc:  # surfaced on the calling thread below
            errors.append(exc)

    pool = [threading.Thread(target=wrapped, args=(i,)) for i in range(threads)]
    for t in pool:
        t.start()
    for t in pool:
        t.join()
    if errors:
        raise errors[0]


def _check_group(quota: int, threads: int) -> None:
    if quota < 0:
        raise ValidationError("quota must be >= 0")
    if threads < 1:
        raise ValidationError("threads must be >= 1")


def run_group_dynamic(quota: int, threads: int, scene: Scene, config: SimulationConfig,
                      base: int = 0, count_hits: bool = False,
                      shared: Optional[np.ndarray] = None) -> GroupResult:
    """Threads claim global photon indices base..base+quota-1 from one shared counter.

    ``shared`` optionally supplies the float64 buffer for shared accumulation,
    letting several groups write into one map.
    """
    _check_group(quota, threads)
    ks = pack(scene, config)
    counter = GroupCounter(quota)
    bufs = _Buffers(scene.grid.nvoxels, threads, config, count_hits, shared)
    done = [0] * threads

    def work(i):
        done[i] = run_claimed(counter.buffer, quota, base, ks.seed, ks.src_kind, ks.src,
                              ks.labels, ks.dims, ks.voxel_size, ks.media, ks.params,
                              bufs.sink(i), bufs.tallies[i])

    t = time.perf_counter()
    _run_threads(work, threads)
    wall = (time.perf_counter() - t) * 1e3
    fmap = bufs.fluence(scene.grid.dims, quota, ks.params[4], shared is None)
    return GroupResult(fmap, tuple(done), bufs.total_tallies(), wall)


def static_blocks(quota: int, threads: int) -> List[Tuple[int, int]]:
    """Contiguous blocks of ceil(quota/threads) offsets; trailing blocks may be short or empty."""
    _check_group(quota, threads)
    size = -(-quota // threads) if quota else 0
    return [(min(i * size, quota), min((i + 1) * size, quota)) for i in range(threads)]


def run_static_split(quota: int, threads: int, scene: Scene, config: SimulationConfig,
                     base: int = 0, count_hits: bool = False, record_costs: bool = False,
                     shared: Optional[np.ndarray] = None) -> GroupResult:
    """Thread i simulates the i-th contiguous block of ``static_blocks``."""
    blocks = static_blocks(quota, threads)
    ks = pack(scene, config)
    bufs = _Buffers(scene.grid.nvoxels, threads, config, count_hits, shared)
    costs = np.zeros(quota if record_costs else 0, dtype=np.int64)
    empty = np.zeros(0, dtype=np.int64)

    def work(i):
        lo, hi = blocks[i]
        out = costs[lo:hi] if record_costs else empty
        run_range(base + lo, base + hi, ks.seed, ks.src_kind, ks.src, ks.labels, ks.dims,
                  ks.voxel_size, ks.media, ks.params, bufs.sink(i), bufs.tallies[i], out)

    t = time.perf_counter()
    _run_threads(work, threads)
    wall = (time.perf_counter() - t) * 1e3
    fmap = bufs.fluence(scene.grid.dims, quota, ks.params[4], shared is None)
    return GroupResult(fmap, tuple(hi - lo for lo, hi in blocks), bufs.total_tallies(), wall,
                       costs if record_costs else None)


@njit(cache=True)
def _greedy_loads(costs, threads):
    loads = np.zeros(threads)
    for c in costs:
        best = 0
        for j in range(1, threads):
            if loads[j] < loads[best]:
                best = j
        loads[best] += c
    return loads


def replay_dynamic(costs: np.ndarray, threads: int) -> Tuple[float, np.ndarray]:
    """Makespan when photons, in index order, go to whichever thread frees up first.

    This is what counter-based claiming does when photon k takes ``costs[k]``
    time; ties go to the lower thread index.
    """
    loads = _greedy_loads(np.asarray(costs, dtype=np.float64), int(threads))
    return float(loads.max()), loads


def replay_static(costs: np.ndarray, threads: int) -> Tuple[float, np.ndarray]:
    costs = np.asarray(costs, dtype=np.float64)
    loads = np.array([costs[lo:hi].sum() for lo, hi in static_blocks(len(costs), threads)])
    return float(loads.max()), loads


def lognormal_costs(n: int, sigma: float, seed: int) -> np.ndarray:
    """Heavy-tailed per-photon costs with mean 1."""
    z = np.random.default_rng(seed).standard_normal(n)
    return np.exp(sigma * z - 0.5 * sigma * sigma)


# ---------------------------------------------------------------- device partitioning


def _largest_remainder(total: int, weights: Sequence[Fraction]) -> Partition:
    wsum = sum(weights)
    if wsum <= 0:
        raise ValidationError("partition weights must have a positive sum")
    shares = [Fraction(total) * w / wsum for w in weights]
    counts = [math.floor(s) for s in shares]
    left = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return Partition(tuple(counts))


def _check_partition_args(total: int, devices: Sequence[DeviceProfile]) -> None:
    if int(total) != total or total < 0:
        raise ValidationError(f"total must be an integer >= 0, got {total}")
    if not devices:
        raise ValidationError("at least one device is required")


def partition_s1(total: int, devices: Sequence[DeviceProfile]) -> Partition:
    """Counts proportional to core count."""
    _check_partition_args(total, devices)
    return _largest_remainder(int(total), [Fraction(d.cores) for d in devices])


def partition_s2(total: int, devices: Sequence[DeviceProfile]) -> Partition:
    """Counts proportional to calibrated throughput 1/a."""
    _check_partition_args(total, devices)
    _require_calibrated(devices)
    return _largest_remainder(int(total), [1 / Fraction(d.a) for d in devices])


def makespan(counts: Sequence[int], devices: Sequence[DeviceProfile]) -> float:
    """Modeled finishing time of the slowest device (ms)."""
    _require_calibrated(devices)
    return max([d.a * n + d.t0 for n, d in zip(counts, devices) if n > 0], default=0.0)


def continuous_split(total: int, devices: Sequence[DeviceProfile],
                     rtol: float = 1e-9) -> Tuple[float, float, List[float]]:
    """Continuous minimax relaxation: every active device finishes at T*.

    n_i(T) = max(0, (T - t0_i)/a_i); T* solves sum n_i(T*) = total by
    bisection. Returns (lo, hi, shares) with sum n(lo) < total <= sum n(hi).
    """
    _require_calibrated(devices)

    def load(t):
        return sum(max(0.0, (t - d.t0) / d.a) for d in devices)

    lo = 0.0
    hi = min(d.t0 + d.a * total for d in devices)
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if load(mid) < total:
            lo = mid
        else:
            hi = mid
    return lo, hi, [max(0.0, (hi - d.t0) / d.a) for d in devices]


def partition_s3(total: int, devices: Sequence[DeviceProfile]) -> Partition:
    """Integer partition minimizing max_i (a_i*n_i + t0_i*[n_i > 0]).

    The continuous optimum T* bounds the integer optimum from below. From
    there, candidate makespans a_i*n + t0_i are taken in increasing order
    until the devices can hold every photon; the first such value is the
    integer optimum. The few surplus photons are then removed from the
    devices furthest above their continuous share (ties keep photons on the
    lower index).
    """
    _check_partition_args(total, devices)
    _require_calibrated(devices)
    total = int(total)
    k = len(devices)
    if total == 0:
        return Partition((0,) * k)
    lo, _, shares = continuous_split(total, devices)
    caps = [max(0, math.floor((lo - d.t0) / d.a) - 2) if lo > d.t0 else 0 for d in devices]
    held = sum(caps)
    heap = [(d.a * (c + 1) + d.t0, i) for i, (d, c) in enumerate(zip(devices, caps))]
    heapq.heapify(heap)
    best = 0.0
    while held < total:
        best, i = heapq.heappop(heap)
        caps[i] += 1
        held += 1
        heapq.heappush(heap, (devices[i].a * (caps[i] + 1) + devices[i].t0, i))
    # devices tied at the optimum can hold one more each
    for i, d in enumerate(devices):
        while d.a * (caps[i] + 1) + d.t0 <= best:
            caps[i] += 1
    counts = caps
    for _ in range(sum(counts) - total):
        i = max((i for i in range(k) if counts[i] > 0), key=lambda i: (counts[i] - shares[i], i))
        counts[i] -= 1
    return Partition(tuple(counts))


def improving_move(counts: Sequence[int], devices: Sequence[DeviceProfile]) -> Optional[Tuple[int, int]]:
    """A single-photon move (i -> j) that lowers the makespan, or None."""
    base = makespan(counts, devices)
    counts = list(counts)
    for i in range(len(counts)):
        if counts[i] == 0:
            continue
        for j in range(len(counts)):
            if i == j:
                continue
            counts[i] -= 1
            counts[j] += 1
            better = makespan(counts, devices) < base
            counts[i] += 1
            counts[j] -= 1
            if better:
                return i, j
    return None


def partition(strategy: Strategy, total: int, devices: Sequence[DeviceProfile]) -> Partition:
    if len(devices) == 1:
        _check_partition_args(total, devices)
        return Partition((int(total),))
    fn = {Strategy.S1: partition_s1, Strategy.S2: partition_s2, Strategy.S3: partition_s3}
    return fn[Strategy(strategy)](total, devices)


def ideal_throughput(devices: Sequence[DeviceProfile]) -> float:
    """Sum of device speeds 1/a in photons/ms, ignoring overheads."""
    _require_calibrated(devices)
    return sum(1.0 / d.a for d in devices)


# ---------------------------------------------------------------- simulated device timing

_COST_CHUNK = 1 << 16


def jitter_sum(seed: int, sigma: float, start: int, stop: int) -> float:
    """Sum of per-photon cost multipliers exp(sigma*z_k - sigma^2/2) over k in [start, stop).

    z_k is a fixed standard normal per global photon index, drawn in chunks
    so any range can be evaluated without generating the prefix.
    """
    if stop <= start:
        return 0.0
    if sigma == 0.0:
        return float(stop - start)
    total = 0.0
    for chunk in range(start // _COST_CHUNK, (stop - 1) // _COST_CHUNK + 1):
        z = np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, chunk]).standard_normal(_COST_CHUNK)
        lo = max(start - chunk * _COST_CHUNK, 0)
        hi = min(stop - chunk * _COST_CHUNK, _COST_CHUNK)
        total += float(np.exp(sigma * z[lo:hi] - 0.5 * sigma * sigma).sum())
    return total


def simulated_time(device: DeviceProfile, start: int, stop: int, seed: int = 0) -> float:
    """Modeled ms for a simulated device to run photons [start, stop)."""
    n = stop - start
    if n <= 0:
        return 0.0
    return device.t0 + device.a * jitter_sum(seed, device.jitter_sigma, start, stop)


@dataclass
class DeviceStudy:
    strategy: Strategy
    partition: Partition
    times_ms: Tuple[float, ...]
    makespan_ms: float
    model_makespan_ms: float
    ideal_throughput: float

    @property
    def throughput(self) -> float:
        return self.partition.total / self.makespan_ms if self.makespan_ms > 0 else math.inf


def simulate_devices(total: int, devices: Sequence[DeviceProfile], strategy: Strategy,
                     seed: int = 0) -> DeviceStudy:
    """Partition and time a run on simulated devices without any transport."""
    part = partition(strategy, total, devices)
    times = tuple(simulated_time(d, lo, hi, seed) for d, (lo, hi) in zip(devices, part.ranges()))
    return DeviceStudy(Strategy(strategy), part, times, max(times, default=0.0),
                       makespan(part.counts, devices), ideal_throughput(devices))


# ---------------------------------------------------------------- calibration


def calibrate(device: DeviceProfile, n1: int = 10**6, n2: int = 5 * 10**6,
              scene: Optional[Scene] = None, config: Optional[SimulationConfig] = None,
              noise: float = 0.0, rng: Optional[np.random.Generator] = None,
              timer: Optional[Callable[[int], float]] = None) -> Tuple[float, float]:
    """Fit (a, t0) from pilot runs at n1 and n2 photons.

    Simulated devices "measure" a_true*n + t0_true, scaled by (1 + noise*z)
    when ``noise`` is set. Real devices run the scene on their worker pool.
    ``timer`` overrides both with a custom measurement function.
    """
    if not (int(n1) == n1 and int(n2) == n2 and n2 > n1 >= 1):
        raise ValidationError("calibration needs integers n2 > n1 >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    if timer is None:
        if device.kind is DeviceKind.SIMULATED:
            def timer(n):
                return device.a * n + device.t0
        else:
            if scene is None or config is None:
                raise ValidationError("calibrating a real device needs a scene and config")

            def timer(n):
                res = run_device(device, 0, n, scene, config.with_(photon_count=n))
                return res.wall_ms

    def measure(n):
        t = float(timer(int(n)))
        return t * (1.0 + noise * rng.standard_normal()) if noise else t

    t1 = measure(n1)
    t2 = measure(n2)
    if not t2 > t1:
        raise NonPositiveSlope(f"pilot times T1={t1:.3f} ms, T2={t2:.3f} ms do not increase; "
                               "raise n2")
    a = (t2 - t1) / (n2 - n1)
    return a, max(0.0, t1 - a * n1)


class CalibrationCache:
    """JSON sidecar of fitted (a, t0) keyed by device name and scene digest."""

    def __init__(self, path):
        self.path = Path(path)
        self.entries: Dict[str, dict] = {}
        if self.path.exists():
            self.entries = json.loads(self.path.read_text()).get("entries", {})

    @staticmethod
    def key(device_name: str, scene_digest: str) -> str:
        return f"{device_name}|{scene_digest}"

    def get(self, device_name: str, scene_digest: str) -> Optional[Tuple[float, float]]:
        e = self.entries.get(self.key(device_name, scene_digest))
        return (e["a"], e["t0"]) if e else None

    def put(self, device_name: str, scene_digest: str, a: float, t0: float, **extra) -> None:
        self.entries[self.key(device_name, scene_digest)] = dict(a=a, t0=t0, **extra)
        self.path.write_text(json.dumps({"entries": self.entries}, indent=2, sort_keys=True))

    def apply(self, devices: Sequence[DeviceProfile], scene_digest: str) -> List[DeviceProfile]:
        out = []
        for d in devices:
            hit = None if d.calibrated else self.get(d.name, scene_digest)
            out.append(d.with_calibration(*hit) if hit else d)
        return out


# ---------------------------------------------------------------- device execution


@dataclass
class DeviceRun:
    name: str
    start: int
    photons: int
    wall_ms: float
    modeled: bool
    threads: int


def run_device(device: DeviceProfile, start: int, count: int, scene: Scene,
               config: SimulationConfig, threads: Optional[int] = None, seed: int = 0,
               shared: Optional[np.ndarray] = None) -> "_DeviceOutcome":
    """Run photons [start, start+count) on one device.

    Worker threads are organized in workgroups of ``config.workgroup_size``;
    each group gets an equal contiguous slice of the device quota and
    balances it dynamically among its own threads.
    """
    threads = int(threads or device.worker_count())
    wg = config.workgroup_size
    groups = max(1, -(-threads // wg))
    slices = static_blocks(count, groups)
    results: List[Optional[GroupResult]] = [None] * groups

    def work(g):
        lo, hi = slices[g]
        size = min(wg, threads - g * wg)
        results[g] = run_group_dynamic(hi - lo, size, scene, config, base=start + lo,
                                       shared=shared)

    t = time.perf_counter()
    _run_threads(work, groups)
    wall = (time.perf_counter() - t) * 1e3
    if shared is None:
        fmap = merge([r.fluence for r in results])
    else:
        fmap = FluenceMap.from_shared(scene.grid.dims, shared, count)
    fmap.photon_count = count
    tallies = sum((r.tallies for r in results), np.zeros(N_TALLIES))
    modeled = device.kind is DeviceKind.SIMULATED
    ms = simulated_time(device, start, start + count, seed) if modeled else wall
    return _DeviceOutcome(fmap, tallies, DeviceRun(device.name, start, count, ms, modeled, threads))


@dataclass
class _DeviceOutcome:
    fluence: FluenceMap
    tallies: np.ndarray
    run: DeviceRun

    @property
    def wall_ms(self) -> float:
        return self.run.wall_ms


@dataclass
class MultiDeviceResult:
    fluence: FluenceMap
    partition: Partition
    strategy: Strategy
    devices: List[DeviceRun]
    tallies: np.ndarray

    @property
    def makespan_ms(self) -> float:
        return max((d.wall_ms for d in self.devices if d.photons), default=0.0)

    @property
    def throughput(self) -> float:
        ms = self.makespan_ms
        return self.partition.total / ms if ms > 0 else math.inf


def run_multi_device(total: int, devices: Sequence[DeviceProfile], strategy: Strategy,
                     scene: Scene, config: SimulationConfig, threads: Optional[int] = None,
                     seed: Optional[int] = None) -> MultiDeviceResult:
    """Partition ``total`` photons, run every device concurrently and merge their maps.

    ``config.photon_count`` is taken to be ``total``. ``threads`` overrides
    each device's worker count. ``seed`` keys the simulated cost jitter and
    defaults to the master seed.
    """
    if config.photon_count != total:
        config = config.with_(photon_count=total)
    part = partition(strategy, total, devices)
    shared = None
    if config.accumulation_mode is AccumulationMode.SHARED_ATOMIC:
        shared = np.zeros(scene.grid.nvoxels)
    seed = config.master_seed if seed is None else seed
    outcomes: List[Optional[_DeviceOutcome]] = [None] * len(devices)

    def work(i):
        lo, hi = part.ranges()[i]
        outcomes[i] = run_device(devices[i], lo, hi - lo, scene, config, threads, seed, shared)

    _run_threads(work, len(devices))
    if shared is None:
        fmap = merge([o.fluence for o in outcomes])
    else:
        fmap = FluenceMap.from_shared(scene.grid.dims, shared, total)
    fmap.photon_count = total
    tallies = sum((o.tallies for o in outcomes), np.zeros(N_TALLIES))
    return MultiDeviceResult(fmap, part, Strategy(strategy), [o.run for o in outcomes], tallies)


def default_devices(threads: Optional[int] = None) -> List[DeviceProfile]:
    """A single real device backed by this machine's CPU cores."""
    return [DeviceProfile("cpu", os.cpu_count() or 1, kind=DeviceKind.REAL, threads=threads)]
