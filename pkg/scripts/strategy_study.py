"""Device-level partitioning: S1/S2/S3 makespans and multi-device scaling.

    python scripts/strategy_study.py
"""
import argparse

from voxmc.scheduler import DeviceProfile, Strategy, makespan, partition, simulate_devices

# per-device overhead (ms) and its share of the runtime at 1e8 photons
FLEET = [("1080Ti", 3584, 53.0, 0.01), ("980Ti", 2816, 63.0, 0.008),
         ("R9Nano", 4096, 631.0, 0.12), ("RX480", 2304, 652.0, 0.11)]


def fleet():
    return [DeviceProfile(name, cores, a=(t0 / share - t0) / 1e8, t0=t0)
            for name, cores, t0, share in FLEET]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scaling-photons", type=int, default=10**6)
    ap.add_argument("--jitter", type=float, default=1.0)
    args = ap.parse_args()

    devices = fleet()
    print("makespan [ms] by total photon count")
    print(f"{'total':>8} {'S1':>9} {'S2':>9} {'S3':>9} {'S2 gain':>8} {'S3 gain':>8}")
    for total in (10**8, 2 * 10**8, 4 * 10**8, 10**9):
        ms = [makespan(partition(s, total, devices).counts, devices) for s in Strategy]
        print(f"{total:>8.0e} {ms[0]:>9.1f} {ms[1]:>9.1f} {ms[2]:>9.1f} "
              f"{1 - ms[1] / ms[0]:>8.1%} {1 - ms[2] / ms[0]:>8.1%}")

    n = args.scaling_photons
    a = devices[0].a
    print(f"\nscaling over k identical devices, {n} photons, jitter sigma {args.jitter}")
    print(f"{'k':>3} {'t0=0':>8} {'t0=1%':>8} {'model':>8}")
    t0 = 0.01 * a * n / 0.99
    for k in range(1, 9):
        row = []
        for overhead in (0.0, t0):
            devs = [DeviceProfile(f"g{i}", 3584, a=a, t0=overhead, jitter_sigma=args.jitter)
                    for i in range(k)]
            solo = simulate_devices(n, devs[:1], Strategy.S3).makespan_ms
            row.append(solo / simulate_devices(n, devs, Strategy.S3).makespan_ms)
        model = (a * n + t0) / (a * n / k + t0)
        print(f"{k:>3} {row[0]:>8.3f} {row[1]:>8.3f} {model:>8.3f}")


if __name__ == "__main__":
    main()
