"""Sweep hbar for a packet in the quartic-perturbed oscillator and print the table.

    python3 scripts/hbar_sweep.py --hbar 0.16 0.08 0.04 0.02 --momentum local-spread
"""

import argparse

from bornlimit.correspondence import SweepScenario, hbar_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hbar", type=float, nargs="+", default=[0.16, 0.08, 0.04, 0.02, 0.01])
    ap.add_argument("--momentum", choices=["phase-gradient", "local-spread"], default="phase-gradient")
    ap.add_argument("--count", type=int, default=200_000)
    ap.add_argument("--threads", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sc = SweepScenario(count=args.count, momentum=args.momentum, seed=args.seed)
    report = hbar_sweep(sc, args.hbar, threads=args.threads)
    print(f"{'hbar':>8} {'L1':>10} {'valid':>8} {'seconds':>8}  note")
    for r in report.rows:
        print(f"{r.hbar:8.4f} {r.l1_distance:10.5f} {r.validity_fraction:8.4f} {r.wall_time_seconds:8.2f}  {r.note}")


if __name__ == "__main__":
    main()
