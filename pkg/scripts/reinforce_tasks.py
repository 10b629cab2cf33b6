"""REINFORCE on the 3-D task grid: final reward rate against number of tasks and switch period.

Usage: python3 scripts/reinforce_tasks.py [--out results] [--seeds 30] [--steps 10000]
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from polymix.agents.reinforce import run_reinforce


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--tasks", type=int, nargs="+", default=[1, 10, 100, 1000])
    p.add_argument("--taus", type=int, nargs="+", default=[100, 1000, 10_000])
    args = p.parse_args()
    rows = []
    for n_tasks in args.tasks:
        for tau in args.taus:
            rates = [run_reinforce(10, n_tasks, tau, args.steps, seed).final_reward_rate for seed in range(args.seeds)]
            rows.append(
                {
                    "n_tasks": n_tasks,
                    "tau": tau,
                    "steps": args.steps,
                    "mean_rate": float(np.mean(rates)),
                    "stderr": float(np.std(rates, ddof=1) / np.sqrt(len(rates))) if len(rates) > 1 else "",
                    "n_seeds": len(rates),
                }
            )
            print(rows[-1], flush=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "reinforce_tasks.csv", "w", newline="") as fh:
        fh.write("# polymix-csv v1 reinforce\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
