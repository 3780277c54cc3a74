"""Geometry, media, sources and run configuration."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ValidationError

Vec3 = Tuple[float, float, float]
Index3 = Tuple[int, int, int]

DEFAULT_BENCHMARK_PHOTONS = 10**8


class AccumulationMode(enum.Enum):
    SHARED_ATOMIC = "atomic"
    PRIVATE_MERGE = "merge"


class BoundaryMode(enum.Enum):
    TERMINATE_AT_BOUNDARY = "terminate"
    REFLECT_AT_MISMATCH = "reflect"


@dataclass(frozen=True)
class OpticalProperties:
    """Absorption/scattering coefficients in 1/mm, anisotropy and refractive index."""

    mua: float
    mus: float
    g: float
    n: float

    def __post_init__(self):
        if not self.mua >= 0:
            raise ValidationError(f"mua must be >= 0, got {self.mua}")
        if not self.mus >= 0:
            raise ValidationError(f"mus must be >= 0, got {self.mus}")
        if not -1.0 <= self.g <= 1.0:
            raise ValidationError(f"g must lie in [-1, 1], got {self.g}")
        if not self.n >= 1.0:
            raise ValidationError(f"n must be >= 1, got {self.n}")

    def as_row(self) -> Tuple[float, float, float, float]:
        return (self.mua, self.mus, self.g, self.n)


AIR = OpticalProperties(mua=0.0, mus=0.0, g=0.0, n=1.0)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Labeled voxel volume; ``labels[ix, iy, iz]`` indexes ``media``.

    Label 0 is the exterior medium. Entering a label-0 voxel is treated the
    same as leaving the domain.
    """

    dims: Index3
    voxel_size: float
    labels: np.ndarray = field(repr=False)
    media: Tuple[OpticalProperties, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValidationError(f"dims must be three integers >= 1, got {self.dims}")
        if not self.voxel_size > 0:
            raise ValidationError(f"voxel_size must be > 0, got {self.voxel_size}")
        labels = np.asarray(self.labels)
        if labels.shape != dims:
            raise ValidationError(f"labels shape {labels.shape} does not match dims {dims}")
        media = tuple(self.media)
        if not media:
            raise ValidationError("media list is empty")
        if labels.size and (labels.min() < 0 or labels.max() >= len(media)):
            raise ValidationError("every label must be < len(media)")
        labels = np.array(labels, dtype=np.int32, order="F")
        labels.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "media", media)

    @property
    def nvoxels(self) -> int:
        return int(np.prod(self.dims))

    @property
    def extent(self) -> Vec3:
        return tuple(d * self.voxel_size for d in self.dims)

    def flat_labels(self) -> np.ndarray:
        """Labels in x-fastest order, the layout used by the kernels and volume files."""
        return self.labels.ravel(order="F")

    def media_table(self) -> np.ndarray:
        return np.array([m.as_row() for m in self.media], dtype=np.float64)

    def mua_volume(self) -> np.ndarray:
        return self.media_table()[self.labels, 0]

    def label_at(self, voxel: Index3) -> int:
        return int(self.labels[voxel])

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.dims, self.voxel_size, [m.as_row() for m in self.media])).encode())
        h.update(self.flat_labels().tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.voxel_size == other.voxel_size
            and self.media == other.media
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


def _check_unit(direction: Sequence[float]) -> Vec3:
    d = tuple(float(c) for c in direction)
    if len(d) != 3 or abs(math.sqrt(sum(c * c for c in d)) - 1.0) > 1e-6:
        raise ValidationError(f"direction must be a unit vector, got {direction}")
    return d


@dataclass(frozen=True)
class PencilSource:
    position: Vec3
    direction: Vec3 = (0.0, 0.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        object.__setattr__(self, "direction", _check_unit(self.direction))


@dataclass(frozen=True)
class IsotropicSource:
    """Point source emitting uniformly over the sphere (validation runs)."""

    position: Vec3

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))


Source = Union[PencilSource, IsotropicSource]


@dataclass(frozen=True)
class SimulationConfig:
    photon_count: int
    master_seed: int = 0
    accumulation_mode: AccumulationMode = AccumulationMode.PRIVATE_MERGE
    boundary_mode: BoundaryMode = BoundaryMode.TERMINATE_AT_BOUNDARY
    tmax: float = 5.0  # ns
    roulette_threshold: float = 1e-4
    roulette_multiplier: int = 10
    workgroup_size: int = 64

    def __post_init__(self):
        if int(self.photon_count) != self.photon_count or self.photon_count < 1:
            raise ValidationError(f"photon_count must be an integer >= 1, got {self.photon_count}")
        if not self.tmax > 0:
            raise ValidationError(f"tmax must be > 0, got {self.tmax}")
        if not 0 < self.roulette_threshold < 1:
            raise ValidationError("roulette_threshold must lie in (0, 1)")
        if int(self.roulette_multiplier) != self.roulette_multiplier or self.roulette_multiplier < 2:
            raise ValidationError("roulette_multiplier must be an integer >= 2")
        if int(self.workgroup_size) != self.workgroup_size or self.workgroup_size < 1:
            raise ValidationError("workgroup_size must be a positive integer")
        object.__setattr__(self, "photon_count", int(self.photon_count))
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Scene:
    grid: VoxelGrid
    source: Source

    def __post_init__(self):
        ext = self.grid.extent
        if not all(0.0 <= p <= e for p, e in zip(self.source.position, ext)):
            raise ValidationError(f"source position {self.source.position} lies outside the grid")

    def digest(self) -> str:
        h = hashlib.sha256(self.grid.digest().encode())
        h.update(repr(self.source).encode())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return self.grid == other.grid and self.source == other.source

    __hash__ = None


def voxel_of(position: Sequence[float], grid: VoxelGrid) -> Optional[Index3]:
    """Voxel containing ``position``, or None when it lies outside the grid.

    Lower faces are inclusive, upper faces exclusive.
    """
    idx = []
    for p, n in zip(position, grid.dims):
        i = math.floor(p / grid.voxel_size)
        if i < 0 or i >= n:
            return None
        idx.append(int(i))
    return tuple(idx)


def sphere_labels(dims: Index3, voxel_size: float, center: Vec3, radius: float,
                  inside: int, outside: int) -> np.ndarray:
    """Label voxels whose centers lie within ``radius`` of ``center``."""
    axes = [(np.arange(n) + 0.5) * voxel_size - c for n, c in zip(dims, center)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    labels = np.full(dims, outside, dtype=np.int32)
    labels[x * x + y * y + z * z <= radius * radius] = inside
    return labels


BACKGROUND = OpticalProperties(mua=0.005, mus=1.0, g=0.01, n=1.37)
INCLUSION = OpticalProperties(mua=0.002, mus=5.0, g=0.9, n=1.0)
BENCHMARKS = ("B1", "B2", "B2a")


def benchmark_preset(name: str, photon_count: int = DEFAULT_BENCHMARK_PHOTONS,
                     master_seed: int = 0) -> Tuple[VoxelGrid, PencilSource, SimulationConfig]:
    """The three published benchmark set-ups on a 60 mm cube of 1 mm voxels."""
    if name not in BENCHMARKS:
        raise ValidationError(f"unknown benchmark {name!r}; expected one of {BENCHMARKS}")
    dims = (60, 60, 60)
    if name == "B1":
        labels = np.ones(dims, dtype=np.int32)
        media = (AIR, BACKGROUND)
        boundary = BoundaryMode.TERMINATE_AT_BOUNDARY
    else:
        labels = sphere_labels(dims, 1.0, (30.0, 30.0, 30.0), 15.0, inside=2, outside=1)
        media = (AIR, BACKGROUND, INCLUSION)
        boundary = BoundaryMode.REFLECT_AT_MISMATCH
    mode = AccumulationMode.SHARED_ATOMIC if name == "B2a" else AccumulationMode.PRIVATE_MERGE
    grid = VoxelGrid(dims, 1.0, labels, media)
    source = PencilSource((30.0, 30.0, 0.0), (0.0, 0.0, 1.0))
    config = SimulationConfig(photon_count=photon_count, master_seed=master_seed,
                              accumulation_mode=mode, boundary_mode=boundary)
    return grid, source, config
