"""Dynamic claiming vs static blocks inside one workgroup.

Replays per-photon cost sequences, both synthetic lognormal ones and the
segment counts of real B2 photons, through both schedulers.

    python scripts/workgroup_balance.py
"""
import argparse

import numpy as np

from voxmc.domain import Scene, benchmark_preset
from voxmc.scheduler import lognormal_costs, replay_dynamic, replay_static, run_static_split


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, default=64)
    ap.add_argument("--quota", type=int, default=10**5)
    ap.add_argument("--trials", type=int, default=20)
    args = ap.parse_args()

    print(f"{args.threads} threads, {args.quota} photons per group")
    print(f"{'sigma':>6} {'median gain':>12} {'min gain':>9}")
    for sigma in (0.25, 0.5, 1.0, 1.5):
        gains = []
        for seed in range(args.trials):
            costs = lognormal_costs(args.quota, sigma, seed)
            gains.append(1 - replay_dynamic(costs, args.threads)[0]
                         / replay_static(costs, args.threads)[0])
        print(f"{sigma:>6} {np.median(gains):>12.1%} {min(gains):>9.1%}")

    n = 20 * args.threads
    grid, src, cfg = benchmark_preset("B2", n, 1)
    costs = run_static_split(n, args.threads, Scene(grid, src), cfg, record_costs=True).costs
    dyn = replay_dynamic(costs, args.threads)[0]
    sta = replay_static(costs, args.threads)[0]
    print(f"\nB2 segment counts ({n} photons, cv {costs.std() / costs.mean():.2f}): "
          f"dynamic {dyn:.0f}, static {sta:.0f}, gain {1 - dyn / sta:.1%}")


if __name__ == "__main__":
    main()
