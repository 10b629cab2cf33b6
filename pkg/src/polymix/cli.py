"""Command-line front end.

Every subcommand writes plot-ready CSV files plus ``manifest.json`` into the
output directory (``--out``, else ``$POLYMIX_OUT``, else the working
directory). ``--config FILE.json`` supplies any option by its long name with
dashes turned into underscores; flags given on the command line win.

CSV files start with a ``# polymix-csv v1 <subcommand>`` line.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .agents import AgentConfig
from .analysis import (
    bottleneck_ratio,
    cesaro_mixing_time,
    exact_mixing_time,
    min_diameter,
    policy_diameter,
    return_mixing_time_empirical,
    return_mixing_time_exact,
    spectral_gap,
)
from .envs import FAMILIES, EnvInstance, TabularSimulator, make_env
from .errors import ConvergenceError, PolymixError, SolverError
from .harness import config_grid, diameter_study, mixing_scaling_study, run_lifelong, tune_and_evaluate
from .mdp import PolicyTable, TabularMdp, dumps_mdp, induce_chain, load_mdp, optimal_average_reward, steady_state

CSV_TAG = "# polymix-csv v1"

DEFAULTS = {
    "out": None,
    "seed": 0,
    "env_seed": 0,
    "family": None,
    "mdp": None,
    "d": None,
    "N": None,
    "kind": None,
    "c": None,
    "x": None,
    "tau": None,
    "n_tasks": None,
    "dim": None,
    "smoothing": None,
    "policy": "optimal",
    "eps": [0.25],
    "relative": False,
    "horizon_cap": None,
    "min_diameter": False,
    "max_tracked": 100,
    "horizon": 1_000_000,
    "algorithm": "rho_on",
    "epsilon": 0.1,
    "learning_rate": 0.1,
    "batch_size": 1,
    "planning_steps": 10,
    "n": 3,
    "discount": 0.99,
    "update_model_always": False,
    "reward_init": 1.0,
    "steps": 10_000,
    "seeds": 10,
    "tune_seeds": 3,
    "budgets": None,
    "grid": None,
    "trace": False,
    "wall_time": None,
    "rho_star": None,
    "study": "tret",
    "axis": "tau",
    "points": None,
    "fixed": None,
    "name": None,
}

ENV_KEYS = ("d", "N", "kind", "c", "x", "tau", "n_tasks", "dim", "smoothing")


class Abort(Exception):
    """Configuration problem detected after argument parsing."""


def _env_args(p):
    g = p.add_argument_group("environment")
    g.add_argument("--family", choices=sorted(FAMILIES))
    g.add_argument("--mdp", help="serialized MDP file instead of a generated family")
    g.add_argument("--env-seed", type=int, help="construction seed of the environment")
    g.add_argument("--d", type=int)
    g.add_argument("--N", type=int)
    g.add_argument("--kind", choices=["cycle", "random", "curricular"])
    g.add_argument("--c", type=float)
    g.add_argument("--x", type=float)
    g.add_argument("--tau", type=int)
    g.add_argument("--n-tasks", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--smoothing", type=float)


def _agent_args(p):
    g = p.add_argument_group("agent")
    g.add_argument("--algorithm", choices=["rho_on", "rho_off", "q_on", "q_off", "dyna", "nstep_td"])
    g.add_argument("--epsilon", type=float)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--planning-steps", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--discount", type=float)
    g.add_argument("--update-model-always", action="store_true", default=None)
    g.add_argument("--reward-init", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="polymix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"polymix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (default $POLYMIX_OUT or .)")
        p.add_argument("--config", help="JSON file with option values; flags win")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("analyze", help="exact chain quantities for one policy")
    common(p)
    _env_args(p)
    p.add_argument("--policy", choices=["optimal", "uniform", "reference"])
    p.add_argument("--eps", type=float, nargs="+", help="epsilon values for t_ret and t_mix")
    p.add_argument("--relative", action="store_true", default=None, help="read --eps as relative errors for t_ret")
    p.add_argument("--horizon-cap", type=int)
    p.add_argument("--min-diameter", action="store_true", default=None, help="also compute D* (slow)")

    p = sub.add_parser("mix", help="rollout estimate of the epsilon-return mixing time")
    common(p)
    _env_args(p)
    p.add_argument("--policy", choices=["optimal", "uniform", "reference"])
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--relative", action="store_true", default=None)
    p.add_argument("--max-tracked", type=int)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("regret", help="lifelong regret of one agent config over seeds")
    common(p)
    _env_args(p)
    _agent_args(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds, starting at --seed")
    p.add_argument("--trace", action="store_true", default=None, help="also write per-step traces")
    p.add_argument("--wall-time", type=float, help="per-run wall-time limit in seconds")
    p.add_argument("--rho-star", type=float, help="skip relative value iteration and use this value")

    p = sub.add_parser("sweep", help="grid search then held-out evaluation")
    common(p)
    _env_args(p)
    _agent_args(p)
    p.add_argument("--grid", help='JSON object of option -> list, e.g. \'{"epsilon": [0.05, 0.1]}\'')
    p.add_argument("--budgets", type=int, nargs="+", help="step budgets scored on prefixes of one run")
    p.add_argument("--tune-seeds", type=int)
    p.add_argument("--seeds", type=int, help="number of evaluation seeds")
    p.add_argument("--wall-time", type=float)
    p.add_argument("--rho-star", type=float)

    p = sub.add_parser("scale", help="scaling study with linear and log-log fits")
    common(p)
    p.add_argument("--study", choices=["tret", "diameter"])
    p.add_argument("--axis", choices=["tau", "n_tasks"])
    p.add_argument("--points", type=float, nargs="+")
    p.add_argument("--fixed", help='JSON object, e.g. \'{"n_tasks": 4}\'')
    p.add_argument("--eps", type=float, nargs="+", help="relative errors")
    p.add_argument("--seeds", type=int)
    p.add_argument("--d", type=int)

    p = sub.add_parser("gen", help="write a generated environment in the MDP text format")
    common(p)
    _env_args(p)
    p.add_argument("--name", help="file name (default <family>.mdp)")
    return parser


def resolve(args):
    """Merge defaults, the ``--config`` file and explicit flags (flags win)."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise Abort("config file must hold a JSON object")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise Abort(f"unknown config keys: {sorted(unknown)}")
        opts.update(cfg)
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command"):
            opts[k] = v
    opts["out"] = opts["out"] or os.environ.get("POLYMIX_OUT") or "."
    return opts


def load_env(opts) -> tuple[EnvInstance | None, TabularMdp, str]:
    if opts["mdp"]:
        mdp = load_mdp(opts["mdp"])
        return None, mdp, Path(opts["mdp"]).stem
    if not opts["family"]:
        raise Abort("give --family or --mdp")
    family = opts["family"]
    builder = FAMILIES[family][0]
    accepted = set(inspect.signature(builder).parameters)
    params = {k: opts[k] for k in ENV_KEYS if opts.get(k) is not None and k in accepted}
    env = make_env(family, seed=opts["env_seed"], **params)
    if env.mdp is None:
        raise Abort("this task-grid instance is too large for a tabular view")
    env_id = family + "".join(f"_{k}{v}" for k, v in sorted(params.items())) + f"_s{opts['env_seed']}"
    return env, env.mdp, env_id


def pick_policy(name, env, mdp):
    if name == "uniform":
        return PolicyTable.uniform(mdp.n_states, mdp.n_actions)
    if name == "reference":
        if env is None:
            raise Abort("--policy reference needs a generated family")
        return env.reference_policy
    if env is not None:
        env.rho_star()
        return env.optimal_policy()
    return optimal_average_reward(mdp)[1]


def write_csv(path, command, rows, fields=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        fh.write(f"{CSV_TAG} {command}\n")
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    return str(path)


def _row(quantity, value, env_id, epsilon="", relative_error="", stderr="", seed=""):
    return {
        "quantity": quantity,
        "epsilon": epsilon,
        "relative_error": relative_error,
        "value": value,
        "stderr": stderr,
        "seed": seed,
        "env_id": env_id,
    }


def cmd_analyze(opts):
    env, mdp, env_id = load_env(opts)
    policy = pick_policy(opts["policy"], env, mdp)
    chain = induce_chain(mdp, policy)
    stat = steady_state(chain)
    rows, extra = [], {}
    if env is not None:
        rows.append(_row("rho_star", env.rho_star(), env_id))
        extra["rho_star"] = env.rho_star()
    dense_ok = mdp.n_states <= 2000
    for eps in opts["eps"]:
        if dense_ok and 0 < eps < 1:
            for name, fn in (("t_mix", exact_mixing_time), ("t_ces", cesaro_mixing_time)):
                try:
                    rows.append(_row(name, fn(chain, eps, mu=stat.mu), env_id, epsilon=eps))
                except ConvergenceError as exc:
                    rows.append(_row(name, "inf", env_id, epsilon=eps, stderr=f"last={exc.last_value:.4g}"))
    tau = env.params.get("tau") if env is not None else None
    try:
        rep = return_mixing_time_exact(mdp, policy, opts["eps"], opts["horizon_cap"], opts["relative"], tau=tau)
        rows += [dict(r, env_id=env_id) for r in rep.rows()]
    except (ConvergenceError, PolymixError) as exc:
        rows.append(_row("tret_mean", "nan", env_id, stderr=str(exc)))
    if dense_ok:
        rows.append(_row("spectral_gap", spectral_gap(chain), env_id))
        try:
            rep = policy_diameter(chain)
            rows += [dict(r, env_id=env_id) for r in rep.rows()]
        except SolverError as exc:
            rows.append(_row("policy_diameter", "inf", env_id, stderr=str(exc)))
    if opts["min_diameter"]:
        skip = env is not None and env.family_id == "cyclic_rooms_tau"
        rows.append(_row("min_diameter", min_diameter(mdp, skip_unreachable=skip), env_id))
    if env is not None and env.region_map is not None and env.region_map.n_regions > 1:
        for k, region in enumerate(env.region_map.regions):
            try:
                rep = bottleneck_ratio(chain, stat, region)
            except PolymixError:
                continue
            rows += [dict(r, quantity=f"{r['quantity']}[{k}]", env_id=env_id) for r in rep.rows()]
    out = write_csv(Path(opts["out"]) / "analyze.csv", "analyze", rows)
    return [out], extra


def cmd_mix(opts):
    env, mdp, env_id = load_env(opts)
    policy = pick_policy(opts["policy"], env, mdp)
    sim = env.simulator() if env is not None else TabularSimulator(mdp)
    rep = return_mixing_time_empirical(
        sim, policy, opts["eps"], opts["max_tracked"], opts["horizon"], opts["seed"], opts["relative"]
    )
    rows = [dict(r, env_id=env_id) for r in rep.rows(seed=opts["seed"])]
    for k, e in enumerate(rep.epsilon_grid):
        rows.append(_row("n_excluded", int(rep.n_excluded[k]), env_id, epsilon=e, seed=opts["seed"]))
    out = write_csv(Path(opts["out"]) / "mix.csv", "mix", rows)
    return [out], {"rho_estimate": rep.rho_estimate}


def _agent_config(opts):
    return AgentConfig(
        algorithm=opts["algorithm"],
        epsilon=opts["epsilon"],
        learning_rate=opts["learning_rate"],
        batch_size=opts["batch_size"],
        planning_steps=opts["planning_steps"],
        n=opts["n"],
        discount=opts["discount"],
        update_model_always=bool(opts["update_model_always"]),
        reward_init=opts["reward_init"],
        seed=opts["seed"],
    )


def cmd_regret(opts):
    if opts["steps"] < 1:
        raise Abort("--steps must be >= 1")
    if opts["seeds"] < 1:
        raise Abort("--seeds must be >= 1")
    env, mdp, env_id = load_env(opts)
    if env is None:
        raise Abort("regret needs a generated family")
    cfg = _agent_config(opts)
    rho_star = env.rho_star() if opts["rho_star"] is None else opts["rho_star"]
    rows, outs = [], []
    for seed in range(opts["seed"], opts["seed"] + opts["seeds"]):
        trace = run_lifelong(env, cfg, opts["steps"], seed, rho_star, opts["wall_time"], record_rho_hat=opts["trace"])
        rows.append(
            {
                "algorithm": cfg.algorithm,
                "seed": seed,
                "steps": trace.steps,
                "rho_star": rho_star,
                "mean_reward": float(np.mean(trace.rewards)),
                "regret_per_step": trace.regret_per_step,
                "truncated": trace.truncated,
                "env_id": env_id,
            }
        )
        if opts["trace"]:
            outs.append(write_csv(Path(opts["out"]) / f"trace_seed{seed}.csv", "regret-trace", trace.rows(cfg.epsilon)))
    outs.insert(0, write_csv(Path(opts["out"]) / "regret.csv", "regret", rows))
    regrets = [r["regret_per_step"] for r in rows]
    return outs, {"rho_star": rho_star, "mean_regret": float(np.mean(regrets)), "std_regret": float(np.std(regrets))}


def cmd_sweep(opts):
    env, mdp, env_id = load_env(opts)
    if env is None:
        raise Abort("sweep needs a generated family")
    grid = opts["grid"]
    if isinstance(grid, str):
        grid = json.loads(grid)
    grid = grid or {}
    if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
        raise Abort("--grid must map option names to nonempty lists")
    configs = config_grid(_agent_config(opts), **grid)
    budgets = opts["budgets"] or [opts["steps"]]
    tune = range(1000 + opts["seed"], 1000 + opts["seed"] + opts["tune_seeds"])
    evals = range(opts["seed"], opts["seed"] + opts["seeds"])
    rho_star = env.rho_star() if opts["rho_star"] is None else opts["rho_star"]
    res = tune_and_evaluate(env, configs, tune, evals, budgets, rho_star, opts["wall_time"])
    search_csv = write_csv(Path(opts["out"]) / "sweep_search.csv", "sweep-search", res.search.rows(env_id))
    rows = []
    for b in res.search.budgets:
        cfg = res.search.best_config(b)
        for seed, reg in zip(evals, res.eval_regrets[b]):
            rows.append({"algorithm": cfg.algorithm, "steps": b, "config": res.search.best[b], "seed": seed,
                         "regret_per_step": reg, "env_id": env_id})
    eval_csv = write_csv(Path(opts["out"]) / "sweep_eval.csv", "sweep-eval", rows)
    summary = {
        str(b): {"best": res.search.best_config(b).to_dict(), "mean": res.mean(b), "std": res.std(b)}
        for b in res.search.budgets
    }
    return [search_csv, eval_csv], {"rho_star": rho_star, "summary": summary, "truncated": res.search.truncated}


def cmd_scale(opts):
    seeds = range(opts["seed"], opts["seed"] + opts["seeds"])
    if opts["study"] == "diameter":
        ds = [int(p) for p in opts["points"]] if opts["points"] else [3, 5, 7, 9, 11, 13, 15]
        studies = [diameter_study(ds, seed=opts["env_seed"])]
    else:
        fixed = opts["fixed"]
        if isinstance(fixed, str):
            fixed = json.loads(fixed)
        if not opts["points"]:
            raise Abort("--points is required for the t_ret study")
        other = "n_tasks" if opts["axis"] == "tau" else "tau"
        if not fixed or other not in fixed:
            raise Abort(f"--fixed must give {other}")
        eps = opts["eps"] if opts["eps"] != DEFAULTS["eps"] else [0.1]
        studies = mixing_scaling_study(
            opts["axis"], [int(p) for p in opts["points"]], eps, seeds, fixed, d=opts["d"] or 3
        )
    rows = [r for s in studies for r in s.rows()]
    out = write_csv(Path(opts["out"]) / "scale.csv", "scale", rows)
    fits = write_csv(Path(opts["out"]) / "scale_fit.csv", "scale-fit", [s.summary() for s in studies])
    return [out, fits], {"fits": [s.summary() for s in studies]}


def cmd_gen(opts):
    env, mdp, env_id = load_env(opts)
    name = opts["name"] or f"{env.family_id}.mdp"
    path = Path(opts["out"]) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in env.params.items()}
    comments = [f"family {env.family_id}", "params " + json.dumps(params, sort_keys=True)]
    path.write_text(dumps_mdp(mdp, comments))
    return [str(path)], {}


COMMANDS = {
    "analyze": cmd_analyze,
    "mix": cmd_mix,
    "regret": cmd_regret,
    "sweep": cmd_sweep,
    "scale": cmd_scale,
    "gen": cmd_gen,
}


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        opts = resolve(args)
        outputs, extra = COMMANDS[args.command](opts)
    except Abort as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except (PolymixError, OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        for attr in ("parameter", "step", "last_value", "iterations", "residual"):
            if getattr(exc, attr, None) is not None:
                err[attr] = _jsonable(getattr(exc, attr))
        print(json.dumps(err), file=sys.stderr)
        return 1
    manifest = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "config": {k: _jsonable(v) for k, v in opts.items()},
        "outputs": outputs,
        "results": extra,
        "versions": {
            "polymix": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": time.perf_counter() - start,
    }
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
