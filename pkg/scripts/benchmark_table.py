"""Throughput and energy balance of the built-in benchmarks (B2a is B2 with atomic adds).

    python scripts/benchmark_table.py --photons 100000
"""
import argparse
import time

from voxmc.cli import conservation_summary
from voxmc.domain import Scene, benchmark_preset
from voxmc.scheduler import Strategy, default_devices, run_multi_device


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--photons", type=int, default=10**5)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    devices = default_devices(args.threads)
    print(f"{'bench':>5} {'mode':>7} {'photons/ms':>11} {'segments':>9} {'absorbed':>9} "
          f"{'escaped':>8} {'residual':>9}")
    for name in ("B1", "B2", "B2a"):
        grid, src, cfg = benchmark_preset(name, args.photons, args.seed)
        scene = Scene(grid, src)
        run_multi_device(100, devices, Strategy.S1, scene, cfg)  # warm the compiled kernel
        t = time.perf_counter()
        r = run_multi_device(args.photons, devices, Strategy.S1, scene, cfg)
        ms = 1e3 * (time.perf_counter() - t)
        c = conservation_summary(r.tallies, args.photons)
        print(f"{name:>5} {cfg.accumulation_mode.value:>7} {args.photons / ms:>11.1f} "
              f"{c['segments_per_photon']:>9.1f} {c['deposited'] / args.photons:>9.4f} "
              f"{c['escaped'] / args.photons:>8.4f} {c['residual']:>9.1e}")

if __name__ == "__main__":
    main()
