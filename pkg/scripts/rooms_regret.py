"""Lifelong regret on four rooms (d = 5) with random and cyclic room transitions.

Usage: python3 scripts/rooms_regret.py [--out results] [--N 4] [--kinds random cycle]
"""

import argparse
import json
from pathlib import Path

from polymix.envs import make_rooms
from polymix.protocols import ordering_checks, run_table

from goal_grid_regret import write_rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--N", type=int, default=4)
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--kinds", nargs="+", default=["random", "cycle"])
    p.add_argument("--eval-seeds", type=int, default=10)
    p.add_argument("--tune-seeds", type=int, default=2)
    args = p.parse_args()
    rows, checks = [], []
    for kind in args.kinds:
        env = make_rooms(args.N, args.d, kind=kind, seed=0)
        table = run_table(
            env,
            f"rooms_N{args.N}_d{args.d}_{kind}",
            tune_seeds=range(1000, 1000 + args.tune_seeds),
            eval_seeds=range(args.eval_seeds),
            log=print,
        )
        rows += table.rows()
        for b in table.budgets:
            checks += [dict(c, kind=kind) for c in ordering_checks(table, b)]
    out = Path(args.out)
    write_rows(out / "rooms_regret.csv", rows)
    (out / "rooms_checks.json").write_text(json.dumps(checks, indent=2) + "\n")
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['kind']} {c['steps']} {c['check']}: {c['lhs']:.4f} vs {c['rhs']:.4f}")


if __name__ == "__main__":
    main()
