"""Acceptance criteria, one test each.

Every test prints a single ``criterion N PASS|FAIL`` line with the measured
quantities; the lines are repeated together at the end of the pytest run.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from voxmc.accumulator import normalize
from voxmc.cli import conservation_summary, main
from voxmc.domain import (AIR, BACKGROUND, AccumulationMode, BoundaryMode, IsotropicSource, Scene,
                          SimulationConfig, VoxelGrid, benchmark_preset)
from voxmc.oracles import DiffusionParams, brute_force_partition, diffusion_infinite_cw
from voxmc.rng import derive_stream
from voxmc.scheduler import (DeviceProfile, Strategy, default_devices, lognormal_costs, makespan,
                             partition, partition_s3, replay_dynamic, replay_static,
                             run_group_dynamic, run_multi_device, run_static_split,
                             simulate_devices)
from voxmc.transport import (PhotonState, StepKind, fresnel_reflectance, handle_interface,
                             hg_cos_theta, scatter_chain)

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def record(n, title, ok, detail):
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE[n] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def _run(name, photons, seed, **changes):
    grid, src, cfg = benchmark_preset(name, photons, seed)
    if changes:
        cfg = cfg.with_(**changes)
    return grid, run_multi_device(photons, default_devices(), Strategy.S1, Scene(grid, src), cfg)


def test_c01_energy_conservation(verdict):
    for name in ("B1", "B2"):
        _run(name, 200, 0)  # compile and load outside the timed loop
    worst = 0.0
    t = time.perf_counter()
    for name in ("B1", "B2"):
        for seed in range(10):
            _, r = _run(name, 10**5, seed)
            worst = max(worst, conservation_summary(r.tallies, 10**5)["residual"])
    elapsed = time.perf_counter() - t
    verdict(1, "energy conservation", worst < 1e-6 and elapsed < 30.0,
            f"worst residual {worst:.2e} (< 1e-6) over 20 runs, {elapsed:.1f} s (< 30 s)")


def test_c02_diffusion_agreement(verdict):
    n = 10**7
    dims = (100, 100, 100)
    grid = VoxelGrid(dims, 1.0, np.ones(dims, dtype=np.int32), (AIR, BACKGROUND))
    scene = Scene(grid, IsotropicSource((50.0, 50.0, 50.0)))
    r = run_multi_device(n, default_devices(), Strategy.S1, scene, SimulationConfig(n, 7))
    phi = normalize(r.fluence, grid).data
    c = np.arange(100) + 0.5 - 50.0
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    radius = np.sqrt(x * x + y * y + z * z)
    params = DiffusionParams.from_medium(BACKGROUND.mua, BACKGROUND.mus, BACKGROUND.g)
    ratios = []
    for lo in range(5, 15):
        shell = (radius >= lo) & (radius < lo + 1)
        ratios.append(phi[shell].mean() / diffusion_infinite_cw(radius[shell], params).mean())
    worst = max(abs(q - 1) for q in ratios)
    verdict(2, "diffusion agreement", worst < 0.15,
            f"MC/diffusion per 1 mm shell, r 5-15 mm: {', '.join(f'{q:.3f}' for q in ratios)}; "
            f"worst deviation {worst:.1%} (< 15%)")


def test_c03_mode_equivalence(verdict):
    n = 10**6
    grid, src, cfg = benchmark_preset("B2", n, 3)
    scene = Scene(grid, src)
    merged = run_group_dynamic(n, 1, scene, cfg, count_hits=True).fluence
    atomic_cfg = cfg.with_(accumulation_mode=AccumulationMode.SHARED_ATOMIC)
    atomic = run_group_dynamic(n, 1, scene, atomic_cfg).fluence
    mask = merged.hits.reshape(grid.dims, order="F") >= 100
    a, b = atomic.data[mask], merged.data[mask]
    rel = float(np.max(np.abs(a - b) / np.abs(b)))
    verdict(3, "mode equivalence", rel < 1e-5,
            f"max relative difference {rel:.2e} (< 1e-5) on {int(mask.sum())} voxels with >= 100 deposits")


def _hg_median_by_inversion(g, n=4_000_001):
    mu = np.linspace(-1.0, 1.0, n)
    pdf = 0.5 * (1 - g * g) / (1 + g * g - 2 * g * mu) ** 1.5
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(mu))])
    return float(np.interp(0.5, cdf / cdf[-1], mu))


def test_c04_hg_sampling(verdict):
    parts, ok = [], True
    for g in (0.0, 0.01, 0.9):
        cos, _ = scatter_chain((0.0, 0.0, 1.0), g, derive_stream(404, int(g * 100)), 10**6)
        se = cos.std(ddof=1) / math.sqrt(cos.size)
        z = (cos.mean() - g) / se
        ok &= abs(z) < 3
        parts.append(f"g={g}: mean {cos.mean():.5f} ({z:+.2f} SE)")
        if g == 0.9:
            ref = _hg_median_by_inversion(g)
            med = float(np.median(cos))
            ok &= abs(med - ref) < 1e-4 and abs(hg_cos_theta(g, 0.5) - ref) < 1e-4
            parts.append(f"median {med:.5f} vs inversion {ref:.5f}, sampler at xi=0.5 "
                         f"{hg_cos_theta(g, 0.5):.5f}")
    verdict(4, "HG sampling", bool(ok), "; ".join(parts))


def test_c05_fresnel_snell(verdict):
    r0 = fresnel_reflectance(1.37, 1.0, 1.0)
    closed = (0.37 / 2.37) ** 2
    crit = math.asin(1 / 1.37)
    cfg = SimulationConfig(1, boundary_mode=BoundaryMode.REFLECT_AT_MISMATCH)
    tir = 0
    angles = np.linspace(crit + 1e-9, math.pi / 2 - 1e-9, 2000)
    for th in angles:
        p = PhotonState((5.5, 5.5, 5.0), (math.sin(th), 0.0, math.cos(th)), 1.0, 0.0, 1, 1.0,
                        (5, 5, 4))
        _, out = handle_interface(p, 1.37, 1.0, (0, 0, 1), cfg, derive_stream(0, 0), 2)
        tir += out.kind is StepKind.REFLECTED and fresnel_reflectance(1.37, 1.0, math.cos(th)) == 1.0
    below = fresnel_reflectance(1.37, 1.0, math.cos(crit - 1e-6)) < 1.0
    ok = abs(r0 - closed) < 1e-9 and tir == len(angles) and below
    verdict(5, "Fresnel/Snell", ok,
            f"R(0) = {r0:.9f} vs {closed:.9f}; TIR on {tir}/{len(angles)} angles above "
            f"{math.degrees(crit):.2f} deg; just below critical R < 1: {below}")


def test_c06_s3_optimality(verdict):
    rng = np.random.default_rng(2018)
    t = time.perf_counter()
    mismatches = 0
    for _ in range(500):
        k = int(rng.integers(2, 5))
        total = int(rng.integers(10, 2001))
        devices = [DeviceProfile(f"d{i}", 1, a=float(rng.uniform(0.1, 10)),
                                 t0=float(rng.uniform(0, 1000))) for i in range(k)]
        ms = makespan(partition_s3(total, devices).counts, devices)
        if not math.isclose(ms, brute_force_partition(total, devices)[1], rel_tol=1e-12):
            mismatches += 1
    elapsed = time.perf_counter() - t
    verdict(6, "S3 optimality", mismatches == 0 and elapsed < 60,
            f"{500 - mismatches}/500 instances equal the brute-force optimum in {elapsed:.1f} s (< 60 s)")


def four_device_fleet():
    # overheads and their share of each device's runtime at 1e8 photons fix the slopes
    t0 = [53.0, 63.0, 631.0, 652.0]
    share = [0.01, 0.008, 0.12, 0.11]
    cores = [3584, 2816, 4096, 2304]
    names = ["1080Ti", "980Ti", "R9Nano", "RX480"]
    return [DeviceProfile(nm, c, a=(t / f - t) / 1e8, t0=t)
            for nm, c, t, f in zip(names, cores, t0, share)]


def test_c07_strategy_ordering(verdict):
    devices = four_device_fleet()
    total = 4 * 10**8
    ms = {s: makespan(partition(s, total, devices).counts, devices) for s in Strategy}
    g2 = 1 - ms[Strategy.S2] / ms[Strategy.S1]
    g3 = 1 - ms[Strategy.S3] / ms[Strategy.S1]
    ok = g2 >= 0.05 and g3 >= 0.05 and ms[Strategy.S3] <= ms[Strategy.S2] <= ms[Strategy.S1]
    verdict(7, "strategy ordering", ok,
            f"makespan S1 {ms[Strategy.S1]:.0f} ms, S2 {ms[Strategy.S2]:.0f} ms (-{g2:.1%}), "
            f"S3 {ms[Strategy.S3]:.0f} ms (-{g3:.1%}) at {total:.0e} photons")


def test_c08_multi_device_scaling(verdict):
    n = 10**6
    a = four_device_fleet()[0].a
    speed0, rel_err = [], []
    t0 = 0.01 * a * n / 0.99  # 1% of the solo runtime
    for overhead, out in ((0.0, speed0), (t0, rel_err)):
        devs = [DeviceProfile(f"gpu{i}", 3584, a=a, t0=overhead, jitter_sigma=1.0) for i in range(8)]
        solo = simulate_devices(n, devs[:1], Strategy.S3).makespan_ms
        for k in range(1, 9):
            speedup = solo / simulate_devices(n, devs[:k], Strategy.S3).makespan_ms
            if overhead == 0.0:
                out.append(speedup / k)
            else:
                predicted = (a * n + overhead) / (a * n / k + overhead)
                out.append(speedup / predicted - 1)
    ok = min(speed0) >= 0.95 and max(abs(e) for e in rel_err) <= 0.02
    verdict(8, "multi-device scaling", ok,
            f"t0=0: min speedup/k {min(speed0):.4f} (>= 0.95); t0=1%: speedup at k=8 "
            f"{rel_err[-1]:+.2%} vs model, worst over k {max(abs(e) for e in rel_err):.2%} (<= 2%)")


def test_c09_dynamic_vs_static(verdict):
    threads, quota = 64, 10**5
    gains, wins = [], 0
    for trial in range(100):
        costs = lognormal_costs(quota, 1.0, seed=trial)
        dyn, _ = replay_dynamic(costs, threads)
        sta, _ = replay_static(costs, threads)
        wins += dyn <= sta
        gains.append(1 - dyn / sta)
    grid, src, cfg = benchmark_preset("B2", 6400, 9)
    scene = Scene(grid, src)
    d = run_group_dynamic(6400, threads, scene, cfg)
    s = run_static_split(6400, threads, scene, cfg, record_costs=True)
    same = bool(np.array_equal(d.fluence.ticks, s.fluence.ticks))
    physics_gain = 1 - replay_dynamic(s.costs, threads)[0] / replay_static(s.costs, threads)[0]
    med = float(np.median(gains))
    verdict(9, "dynamic vs static", wins == 100 and med > 0.05 and same,
            f"dynamic <= static on {wins}/100 trials, median improvement {med:.1%} (> 5%); "
            f"fluence bit-identical: {same}; B2 segment-count replay improvement {physics_gain:.1%}")


def test_c10_reproducibility(verdict, tmp_path):
    roster = tmp_path / "roster.json"
    roster.write_text(json.dumps([
        {"name": "fast", "cores": 3584, "a": 1e-5, "t0": 0.2},
        {"name": "slow", "cores": 2304, "a": 2e-5, "t0": 0.3}]))
    checksums, payloads, counts = set(), set(), set()
    for threads in (1, 4, 8):
        for strategy in ("s1", "s2", "s3"):
            out = tmp_path / f"b1_{threads}_{strategy}.raw"
            rep = tmp_path / f"b1_{threads}_{strategy}.json"
            code = main(["run", "--benchmark", "B1", "--photons", "100000", "--seed", "1",
                         "--mode", "merge", "--threads", str(threads), "--strategy", strategy,
                         "--devices", str(roster), "--output", str(out), "--report", str(rep)])
            assert code == 0
            checksums.add(json.loads(rep.read_text())["volume"]["checksum"])
            payloads.add(out.read_bytes())
            counts.add(tuple(d["photons"] for d in json.loads(rep.read_text())["devices"]))
    ok = len(checksums) == 1 and len(payloads) == 1 and len(counts) == 3
    verdict(10, "reproducibility", ok,
            f"{len(checksums)} distinct checksum(s) over 9 runs ({checksums.pop()}), "
            f"{len(counts)} distinct device partitions")


def test_c11_beam_axis(verdict):
    grid, r = _run("B1", 10**6, 0)
    phi = normalize(r.fluence, grid).data
    ix, iy, iz = np.unravel_index(int(np.argmax(phi)), grid.dims)
    ok = (ix, iy) == (30, 30) and iz < 5
    verdict(11, "beam-axis sanity", ok, f"fluence maximum at voxel ({ix}, {iy}, {iz})")
