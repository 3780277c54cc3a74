"""Voxel Monte Carlo photon transport with multi-device load balancing."""
from .accumulator import FluenceMap, deposit, merge, normalize
from .domain import (AccumulationMode, BoundaryMode, IsotropicSource, OpticalProperties,
                     PencilSource, Scene, SimulationConfig, VoxelGrid, benchmark_preset)
from .errors import ParseError, ValidationError, VoxmcError
from .scheduler import (DeviceKind, DeviceProfile, Partition, Strategy, calibrate, partition,
                        run_multi_device, simulate_devices)
from .transport import simulate_photon, trace_ray

__all__ = [
    "AccumulationMode", "BoundaryMode", "DeviceKind", "DeviceProfile", "FluenceMap",
    "IsotropicSource", "OpticalProperties", "ParseError", "Partition", "PencilSource", "Scene",
    "SimulationConfig", "Strategy", "ValidationError", "VoxelGrid", "VoxmcError",
    "benchmark_preset", "calibrate", "deposit", "merge", "normalize", "partition",
    "run_multi_device", "simulate_devices", "simulate_photon", "trace_ray",
]
__version__ = "0.1.0"
