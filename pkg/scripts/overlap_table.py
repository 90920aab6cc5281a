"""Tabulate how well the double Gaussian tracks the sinc as σ_S/σ_C varies.

    python3 scripts/overlap_table.py --out results/overlap.csv
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from jtmakit.validity import PATHS, cl_overlap, threshold_ratio


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lo", type=float, default=0.5)
    ap.add_argument("--hi", type=float, default=4.0)
    ap.add_argument("--n", type=int, default=36)
    ap.add_argument("--target", type=float, default=0.99)
    ap.add_argument("--out", type=Path, default=Path("results/overlap.csv"))
    args = ap.parse_args(argv)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    ratios = np.linspace(args.lo, args.hi, args.n)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("ratio",) + tuple(f"overlap_{p}" for p in PATHS))
        for r in ratios:
            w.writerow((repr(float(r)),) + tuple(repr(cl_overlap(r, p)) for p in PATHS))
    th = {p: threshold_ratio(args.target, p) for p in PATHS}
    for p, v in th.items():
        print(f"{p:12s} overlap >= {args.target}: sigma_S/sigma_C >= {v:.4f}")
    print(f"singles/coincidence threshold ratio: {th['singles'] / th['coincidence']:.4f}")


if __name__ == "__main__":
    main()
