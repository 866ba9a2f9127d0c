"""Singlet CHSH value as the second-fragment settings rotate in the x-z plane.

    python3 scripts/chsh_scan.py --steps 13
"""

import argparse

import numpy as np

from bornlimit.epr import ChshSettings, chsh, singlet_pair


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=13)
    args = ap.parse_args()
    pair = singlet_pair()
    for off in np.linspace(0.0, 90.0, args.steps):
        s = ChshSettings.in_plane_degrees(0.0, 90.0, off, off - 90.0)
        print(f"b = {off:6.2f} deg  b' = {off - 90:7.2f} deg  S = {chsh(pair, s).S:.6f}")


if __name__ == "__main__":
    main()
