"""Compare MC fluence around an isotropic point source with diffusion theory.

    python scripts/diffusion_validation.py --photons 1000000
"""
import argparse
import time

import numpy as np

from voxmc.accumulator import normalize
from voxmc.domain import AIR, BACKGROUND, IsotropicSource, Scene, SimulationConfig, VoxelGrid
from voxmc.oracles import DiffusionParams, diffusion_infinite_cw
from voxmc.scheduler import Strategy, default_devices, run_multi_device


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--photons", type=int, default=10**6)
    ap.add_argument("--size", type=int, default=100, help="cube edge in voxels (1 mm)")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    n = args.size
    dims = (n, n, n)
    grid = VoxelGrid(dims, 1.0, np.ones(dims, dtype=np.int32), (AIR, BACKGROUND))
    centre = n / 2
    scene = Scene(grid, IsotropicSource((centre, centre, centre)))
    t = time.perf_counter()
    r = run_multi_device(args.photons, default_devices(), Strategy.S1, scene,
                         SimulationConfig(args.photons, args.seed))
    print(f"{args.photons} photons in {time.perf_counter() - t:.1f} s")

    phi = normalize(r.fluence, grid).data
    c = np.arange(n) + 0.5 - centre
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    radius = np.sqrt(x * x + y * y + z * z)
    params = DiffusionParams.from_medium(BACKGROUND.mua, BACKGROUND.mus, BACKGROUND.g)
    print(f"D = {params.D:.5f} mm, mu_eff = {params.mueff:.6f} 1/mm")
    print(f"{'r [mm]':>8} {'voxels':>7} {'MC':>12} {'diffusion':>12} {'ratio':>7}")
    for lo in range(1, n // 2 - 5):
        shell = (radius >= lo) & (radius < lo + 1)
        mc = phi[shell].mean()
        ref = diffusion_infinite_cw(radius[shell], params).mean()
        print(f"{lo:>3}-{lo + 1:<4} {int(shell.sum()):>7} {mc:>12.5e} {ref:>12.5e} {mc / ref:>7.3f}")


if __name__ == "__main__":
    main()
