import numpy as np
import pytest

from voxmc.domain import (AIR, BACKGROUND, INCLUSION, AccumulationMode, BoundaryMode,
                          OpticalProperties, PencilSource, Scene, SimulationConfig, VoxelGrid,
                          benchmark_preset, voxel_of)
from voxmc.errors import ValidationError


def test_b1_preset():
    grid, src, cfg = benchmark_preset("B1")
    assert grid.dims == (60, 60, 60) and grid.voxel_size == 1.0
    bg = grid.media[grid.label_at((10, 10, 10))]
    assert (bg.mua, bg.mus, bg.g, bg.n) == (0.005, 1.0, 0.01, 1.37)
    assert grid.media[0] == AIR
    assert src.position == (30.0, 30.0, 0.0) and src.direction == (0.0, 0.0, 1.0)
    assert cfg.photon_count == 10**8
    assert cfg.boundary_mode is BoundaryMode.TERMINATE_AT_BOUNDARY
    assert cfg.accumulation_mode is AccumulationMode.PRIVATE_MERGE


def test_b2_sphere_and_modes():
    grid, _, cfg = benchmark_preset("B2")
    assert grid.media[grid.label_at((30, 30, 30))] == INCLUSION
    assert grid.media[grid.label_at((0, 0, 0))] == BACKGROUND
    assert cfg.boundary_mode is BoundaryMode.REFLECT_AT_MISMATCH
    assert benchmark_preset("B2a")[2].accumulation_mode is AccumulationMode.SHARED_ATOMIC


def test_sphere_voxel_count_matches_brute_force():
    grid, _, _ = benchmark_preset("B2")
    count = 0
    for i in range(60):
        for j in range(60):
            for k in range(60):
                if (i + 0.5 - 30) ** 2 + (j + 0.5 - 30) ** 2 + (k + 0.5 - 30) ** 2 <= 225:
                    count += 1
    assert int(np.sum(grid.labels == 2)) == count


def test_preset_is_pure():
    a, b = benchmark_preset("B2"), benchmark_preset("B2")
    assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2]
    assert Scene(a[0], a[1]).digest() == Scene(b[0], b[1]).digest()


def test_preset_photon_override():
    assert benchmark_preset("B1", 1000)[2].photon_count == 1000
    with pytest.raises(ValidationError):
        benchmark_preset("B3")


def test_voxel_of():
    grid = benchmark_preset("B1")[0]
    assert voxel_of((30.5, 30.5, 0.5), grid) == (30, 30, 0)
    assert voxel_of((-0.1, 30, 30), grid) is None
    assert voxel_of((60.0, 30, 30), grid) is None
    assert voxel_of((0.0, 0.0, 0.0), grid) == (0, 0, 0)


@pytest.mark.parametrize("kw", [dict(mua=-1.0), dict(mus=-0.1), dict(g=1.5), dict(n=0.9)])
def test_optical_invariants(kw):
    base = dict(mua=0.0, mus=0.0, g=0.0, n=1.0)
    base.update(kw)
    with pytest.raises(ValidationError):
        OpticalProperties(**base)


def test_grid_invariants():
    labels = np.ones((2, 2, 2), dtype=np.int32)
    with pytest.raises(ValidationError):
        VoxelGrid((2, 2, 2), 1.0, labels * 2, (AIR, BACKGROUND))
    with pytest.raises(ValidationError):
        VoxelGrid((2, 2, 2), 0.0, labels, (AIR, BACKGROUND))
    with pytest.raises(ValidationError):
        VoxelGrid((2, 2, 3), 1.0, labels, (AIR, BACKGROUND))


def test_source_invariants():
    with pytest.raises(ValidationError):
        PencilSource((0.0, 0.0, 0.0), (0.0, 0.0, 2.0))


@pytest.mark.parametrize("kw", [dict(photon_count=0), dict(tmax=0.0), dict(roulette_threshold=1.0),
                                dict(roulette_multiplier=1), dict(workgroup_size=0)])
def test_config_invariants(kw):
    base = dict(photon_count=10)
    base.update(kw)
    with pytest.raises(ValidationError):
        SimulationConfig(**base)


def test_config_defaults():
    c = SimulationConfig(10)
    assert (c.tmax, c.roulette_threshold, c.roulette_multiplier, c.workgroup_size) == (5.0, 1e-4, 10, 64)
