"""Lifelong regret on the goal grid (d = 5) for all six agents.

Usage: python3 scripts/goal_grid_regret.py [--out results] [--eval-seeds 10] [--tune-seeds 3]
"""

import argparse
import csv
import json
from pathlib import Path

from polymix.envs import make_goal_grid
from polymix.protocols import ordering_checks, run_table


def write_rows(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("# polymix-csv v1 table\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--eval-seeds", type=int, default=10)
    p.add_argument("--tune-seeds", type=int, default=3)
    args = p.parse_args()
    env = make_goal_grid(args.d, seed=0)
    table = run_table(
        env,
        f"goal_grid_d{args.d}",
        tune_seeds=range(1000, 1000 + args.tune_seeds),
        eval_seeds=range(args.eval_seeds),
        log=print,
    )
    out = Path(args.out)
    write_rows(out / "goal_grid_regret.csv", table.rows())
    checks = [c for b in table.budgets for c in ordering_checks(table, b)]
    (out / "goal_grid_checks.json").write_text(json.dumps(checks, indent=2) + "\n")
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['steps']} {c['check']}: {c['lhs']:.4f} vs {c['rhs']:.4f}")


if __name__ == "__main__":
    main()
