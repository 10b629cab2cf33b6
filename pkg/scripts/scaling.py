"""Scaling studies: exact t_ret on cyclic rooms against |Z| and tau, and D* of the goal grid.

Usage: python3 scripts/scaling.py [--out results] [--seeds 10]
"""

import argparse
import csv
from pathlib import Path

from polymix.harness import diameter_study, mixing_scaling_study


def write(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("# polymix-csv v1 scale\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args()
    seeds = range(args.seeds)
    studies = mixing_scaling_study("n_tasks", [2, 4, 6], [0.1, 0.2], seeds, {"tau": 50})
    studies += mixing_scaling_study("tau", [25, 50, 100, 200], [0.1, 0.2], seeds, {"n_tasks": 2})
    studies.append(diameter_study([3, 5, 7, 9, 11, 13, 15]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write(out / "scaling_points.csv", [r for s in studies for r in s.rows()])
    write(out / "scaling_fits.csv", [s.summary() for s in studies])
    for s in studies:
        print(s.summary())


if __name__ == "__main__":
    main()
