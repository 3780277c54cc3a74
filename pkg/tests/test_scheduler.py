import threading

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from voxmc.domain import Scene, benchmark_preset
from voxmc.errors import NonPositiveSlope, UncalibratedDevice, ValidationError
from voxmc.oracles import brute_force_partition
from voxmc.scheduler import (CalibrationCache, DeviceKind, DeviceProfile, GroupCounter, Partition,
                             Strategy, calibrate, continuous_split, ideal_throughput,
                             improving_move, jitter_sum, lognormal_costs, makespan, partition,
                             partition_s1, partition_s2, partition_s3, replay_dynamic,
                             replay_static, run_group_dynamic, run_multi_device,
                             run_static_split, simulate_devices, static_blocks,
                             thread_count_heuristic)


def devs(a, t0=None, cores=None):
    t0 = t0 if t0 is not None else [0.0] * len(a)
    cores = cores or [1] * len(a)
    return [DeviceProfile(f"d{i}", c, a=float(x), t0=float(y))
            for i, (x, y, c) in enumerate(zip(a, t0, cores))]


@pytest.fixture(scope="module")
def b2():
    grid, src, cfg = benchmark_preset("B2", 600, master_seed=11)
    return Scene(grid, src), cfg


# ---------------------------------------------------------------- groups


def test_thread_count_heuristic():
    assert thread_count_heuristic(12, 64) == 768
    assert thread_count_heuristic(1, 1) == 1
    assert thread_count_heuristic(8, 2) == 16
    with pytest.raises(ValidationError):
        thread_count_heuristic(0, 1)


def test_static_blocks():
    assert [hi - lo for lo, hi in static_blocks(100, 3)] == [34, 34, 32]
    assert static_blocks(64, 64) == [(i, i + 1) for i in range(64)]
    assert static_blocks(0, 4) == [(0, 0)] * 4


def test_group_counter_claims_each_offset_once():
    counter = GroupCounter(5000)
    claimed = [[] for _ in range(8)]

    def work(i):
        while (k := counter.claim()) is not None:
            claimed[i].append(k)

    pool = [threading.Thread(target=work, args=(i,)) for i in range(8)]
    for t in pool:
        t.start()
    for t in pool:
        t.join()
    flat = sorted(k for c in claimed for k in c)
    assert flat == list(range(5000)) and counter.remaining == 0
    assert counter.claim() is None and counter.remaining == 0


def test_dynamic_group_edge_cases(b2):
    scene, cfg = b2
    r = run_group_dynamic(0, 4, scene, cfg)
    assert r.per_thread == (0, 0, 0, 0) and r.fluence.total() == 0.0
    r = run_group_dynamic(100, 1, scene, cfg)
    assert r.per_thread == (100,)


def test_dynamic_and_static_agree(b2):
    scene, cfg = b2
    dyn = run_group_dynamic(600, 4, scene, cfg, count_hits=True)
    sta = run_static_split(600, 3, scene, cfg, count_hits=True, record_costs=True)
    assert sum(dyn.per_thread) == 600 and sta.per_thread == (200, 200, 200)
    assert np.array_equal(dyn.fluence.ticks, sta.fluence.ticks)
    assert np.array_equal(dyn.fluence.hits, sta.fluence.hits)
    assert dyn.tallies[4] == sta.tallies[4] == 600
    assert dyn.tallies[0] == pytest.approx(sta.tallies[0], rel=1e-12)
    assert sta.costs.sum() == sta.tallies[5]


def test_dynamic_group_balances_real_work(b2):
    scene, cfg = b2
    r = run_group_dynamic(300, 3, scene, cfg)
    assert sum(r.per_thread) == 300


# ---------------------------------------------------------------- replay


def test_replay_known_values():
    costs = np.array([4.0, 1, 1, 1, 1, 1, 1, 1])
    assert replay_static(costs, 2)[0] == 7.0
    assert replay_dynamic(costs, 2)[0] == 6.0
    # greedy claiming is not better on every sequence
    assert replay_dynamic([1, 1, 2], 2)[0] == 3.0 > replay_static([1, 1, 2], 2)[0] == 2.0


@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=300), st.integers(1, 16))
def test_replay_dynamic_list_scheduling_bound(costs, threads):
    c = np.array(costs)
    dyn, loads = replay_dynamic(c, threads)
    assert loads.sum() == pytest.approx(c.sum())
    # every thread was busy until the last photon started
    assert dyn <= c.sum() / threads + c.max() * (1 - 1 / threads) + 1e-9
    assert replay_static(c, threads)[0] >= c.sum() / threads - 1e-9


def test_lognormal_costs_have_unit_mean():
    c = lognormal_costs(10**6, 1.0, 0)
    assert c.mean() == pytest.approx(1.0, abs=0.01) and np.all(c > 0)


# ---------------------------------------------------------------- partitions


def test_s1_examples():
    assert partition_s1(300, devs([1, 1], cores=[1, 2])).counts == (100, 200)
    assert partition(Strategy.S1, 300, devs([1])).counts == (300,)
    assert partition_s1(10, devs([1, 1, 1], cores=[3, 3, 3])).counts == (4, 3, 3)


def test_s2_examples():
    assert partition_s2(300, devs([1, 2])).counts == (200, 100)
    c = partition_s2(301, devs([3, 3])).counts
    assert abs(c[0] - c[1]) <= 1
    assert partition_s2(10**4, devs([0.002, 0.004, 0.004])).counts == (5000, 2500, 2500)


def test_s3_examples():
    assert partition_s3(300, devs([1, 2])).counts == (200, 100)
    p = partition_s3(300, devs([1, 2], [0, 100]))
    assert p.total == 300 and makespan(p.counts, devs([1, 2], [0, 100])) == 234
    assert p.counts in ((234, 66), (233, 67))
    d = devs([1, 10], [0, 500])
    assert partition_s3(100, d).counts == (100, 0)
    assert brute_force_partition(100, d)[0].counts == (100, 0)


def test_measured_overheads_s3_not_worse_than_s1():
    d = [DeviceProfile(f"g{i}", c, a=a, t0=t0) for i, (c, a, t0) in enumerate(
        zip([3584, 2816, 4096, 2304], [5.2e-5, 7.8e-5, 4.6e-5, 5.3e-5], [53, 63, 631, 652]))]
    n = 10**8
    assert makespan(partition_s3(n, d).counts, d) <= makespan(partition_s1(n, d).counts, d)


instances = st.lists(st.tuples(st.floats(0.1, 10), st.floats(0, 1000), st.integers(1, 4096)),
                     min_size=1, max_size=4)


@given(st.integers(0, 10**7), instances)
def test_partitions_conserve_photons(total, params):
    d = devs(*zip(*[(a, t) for a, t, _ in params]), cores=[c for *_, c in params])
    for s in Strategy:
        p = partition(s, total, d)
        assert p.total == total and min(p.counts) >= 0


@given(st.integers(0, 10**7), instances)
def test_s3_dominates(total, params):
    d = devs(*zip(*[(a, t) for a, t, _ in params]), cores=[c for *_, c in params])
    m3 = makespan(partition_s3(total, d).counts, d)
    assert m3 <= makespan(partition_s2(total, d).counts, d) + 1e-9
    assert m3 <= makespan(partition_s1(total, d).counts, d) + 1e-9
    assert improving_move(partition_s3(total, d).counts, d) is None


@given(st.integers(1, 10**6), st.lists(st.floats(0.1, 10), min_size=2, max_size=4),
       st.floats(0, 1000))
def test_s2_matches_s3_with_equal_overheads(total, a, t0):
    d = devs(a, [t0] * len(a))
    # the continuous optima coincide
    _, _, shares = continuous_split(total, d)
    inv = np.array([1 / x for x in a])
    assert np.allclose(shares, total * inv / inv.sum(), rtol=1e-6)
    # rounding can leave S2 at most one photon on the slowest device behind
    m2 = makespan(partition_s2(total, d).counts, d)
    m3 = makespan(partition_s3(total, d).counts, d)
    assert m3 <= m2 + 1e-9 and m2 <= m3 + max(a) + 1e-9


@given(st.integers(1, 1500), st.lists(st.tuples(st.floats(0.1, 10), st.floats(0, 1000)),
                                      min_size=2, max_size=3))
def test_s3_matches_brute_force(total, params):
    d = devs(*zip(*params))
    assert makespan(partition_s3(total, d).counts, d) == brute_force_partition(total, d)[1]


def test_continuous_split_brackets_total():
    d = devs([1, 2, 4], [0, 10, 900])
    lo, hi, shares = continuous_split(1000, d)
    assert sum(shares) >= 1000 and hi - lo <= 1e-9 * hi
    assert shares[2] == 0.0  # overhead above T*


def test_uncalibrated_real_device():
    real = [DeviceProfile("cpu", 4, kind=DeviceKind.REAL), *devs([1])]
    assert partition_s1(10, real).total == 10
    with pytest.raises(UncalibratedDevice):
        partition_s2(10, real)
    with pytest.raises(UncalibratedDevice):
        partition_s3(10, real)


def test_device_profile_invariants():
    with pytest.raises(ValidationError):
        DeviceProfile("x", 0, a=1, t0=0)
    with pytest.raises(ValidationError):
        DeviceProfile("x", 1, a=0.0, t0=0)
    with pytest.raises(ValidationError):
        DeviceProfile("x", 1, a=1.0, t0=-1)
    with pytest.raises(ValidationError):
        DeviceProfile("x", 1)  # simulated without a model
    with pytest.raises(ValidationError):
        Partition((1, -1))


def test_ideal_throughput():
    assert ideal_throughput(devs([0.5, 0.25], [100, 100])) == 6.0


# ---------------------------------------------------------------- calibration


def test_calibrate_exact_recovery():
    d = DeviceProfile("sim", 1, a=0.002, t0=50.0)
    a, t0 = calibrate(d, 10**4, 5 * 10**4)
    assert a == pytest.approx(0.002, rel=1e-12) and t0 == pytest.approx(50.0, abs=1e-9)
    a, t0 = calibrate(DeviceProfile("sim", 1, a=0.002, t0=0.0), 10**4, 5 * 10**4)
    assert t0 == 0.0


def test_calibrate_noise_median():
    d = DeviceProfile("sim", 1, a=0.002, t0=50.0)
    rng = np.random.default_rng(0)
    est = [calibrate(d, 10**4, 5 * 10**4, noise=0.05, rng=rng)[0] for _ in range(100)]
    assert abs(np.median(est) / 0.002 - 1) < 0.15


def test_calibrate_rejects_flat_timings():
    d = DeviceProfile("sim", 1, a=0.002, t0=50.0)
    with pytest.raises(NonPositiveSlope):
        calibrate(d, 10, 20, timer=lambda n: 5.0)
    with pytest.raises(ValidationError):
        calibrate(d, 20, 10)


def test_calibrate_real_device(b2):
    scene, cfg = b2
    dev = DeviceProfile("cpu", 1, kind=DeviceKind.REAL)
    a, t0 = calibrate(dev, 200, 2000, scene, cfg)
    assert a > 0 and t0 >= 0


def test_calibration_cache(tmp_path):
    path = tmp_path / "cal.json"
    cache = CalibrationCache(path)
    cache.put("cpu", "abc", 0.01, 3.0)
    again = CalibrationCache(path)
    assert again.get("cpu", "abc") == (0.01, 3.0) and again.get("cpu", "other") is None
    real = DeviceProfile("cpu", 2, kind=DeviceKind.REAL)
    (applied,) = again.apply([real], "abc")
    assert (applied.a, applied.t0) == (0.01, 3.0)


# ---------------------------------------------------------------- multi-device


def test_multi_device_is_partition_invariant(b2):
    scene, cfg = b2
    one = run_group_dynamic(600, 1, scene, cfg).fluence
    d = devs([1e-3, 2e-3, 5e-3], [5, 1, 0], cores=[4, 2, 1])
    for s in Strategy:
        r = run_multi_device(600, d, s, scene, cfg, threads=2)
        assert np.array_equal(r.fluence.ticks, one.ticks), s
        assert r.partition.total == 600 and r.tallies[4] == 600
    solo = run_multi_device(600, d[:1], Strategy.S1, scene, cfg)
    assert np.array_equal(solo.fluence.ticks, one.ticks)


def test_multi_device_atomic_mode(b2):
    scene, cfg = b2
    from voxmc.domain import AccumulationMode
    shared_cfg = cfg.with_(accumulation_mode=AccumulationMode.SHARED_ATOMIC)
    r = run_multi_device(600, devs([1, 1], [0, 0]), Strategy.S2, scene, shared_cfg, threads=2)
    merged = run_multi_device(600, devs([1, 1], [0, 0]), Strategy.S2, scene, cfg, threads=2)
    big = merged.fluence.data > 1e-3
    assert np.allclose(r.fluence.data[big], merged.fluence.data[big], rtol=1e-9)
    assert r.fluence.total() == pytest.approx(r.tallies[0], rel=1e-10)


def test_simulated_times(b2):
    scene, cfg = b2
    d = devs([0.01, 0.02], [3, 7])
    r = run_multi_device(600, d, Strategy.S3, scene, cfg)
    for run, dev in zip(r.devices, d):
        assert run.modeled and run.wall_ms == pytest.approx(dev.model_time(run.photons))
    assert r.makespan_ms == pytest.approx(makespan(r.partition.counts, d))
    assert r.throughput == pytest.approx(600 / r.makespan_ms)


def test_identical_devices_split_evenly():
    solo = simulate_devices(10**6, devs([1e-3]), Strategy.S3).makespan_ms
    for k in range(1, 9):
        st_k = simulate_devices(10**6, devs([1e-3] * k), Strategy.S3)
        assert abs(st_k.makespan_ms - solo / k) <= 1e-3 + 1e-9


def test_jitter_sum_is_range_additive():
    total = jitter_sum(3, 1.0, 0, 200_000)
    parts = jitter_sum(3, 1.0, 0, 12_345) + jitter_sum(3, 1.0, 12_345, 200_000)
    assert parts == pytest.approx(total, rel=1e-12)
    assert total / 200_000 == pytest.approx(1.0, abs=0.02)
    assert jitter_sum(3, 0.0, 5, 10) == 5.0
