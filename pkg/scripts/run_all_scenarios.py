"""Run every scenario in scenarios/ and print a one-line summary for each.

    python3 scripts/run_all_scenarios.py --out-dir results --threads 0
"""

import argparse
import time
from pathlib import Path

from bornlimit.cli import run_spec
from bornlimit.scenario import load_spec

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="override every scenario's seed")
    args = ap.parse_args()
    for path in sorted((ROOT / "scenarios").glob("*.json")):
        start = time.perf_counter()
        result = run_spec(load_spec(path), Path(args.out_dir) / path.stem, args.seed, args.threads, path.stem)
        print(f"{path.stem:24s} {time.perf_counter() - start:7.1f}s  {result.summary}")


if __name__ == "__main__":
    main()
