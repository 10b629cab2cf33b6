"""Experiment orchestration: lifelong-regret runs, grid searches and scaling studies."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .agents import AgentConfig, make_agent
from .analysis import min_diameter, return_mixing_time_exact
from .envs import EnvInstance, make_cyclic_rooms_tau, make_goal_grid
from .errors import AgentFailure, InvalidArgument, PolymixError
from .sim import Uniforms


@dataclass
class RegretTrace:
    """Rewards of one continuing run and the regret they imply.

    ``regret_per_step = rho_star - mean(rewards)``.
    """

    rewards: np.ndarray
    rho_star: float
    seed: int
    truncated: bool = False
    rho_hat: np.ndarray | None = None

    @property
    def steps(self):
        return int(self.rewards.size)

    @property
    def regret_per_step(self):
        return self.rho_star - float(np.mean(self.rewards))

    def prefix(self, steps):
        """Trace of the first ``steps`` steps of the same run."""
        if not 1 <= steps <= self.steps:
            raise InvalidArgument(f"prefix length must lie in [1, {self.steps}]", parameter="steps")
        return RegretTrace(
            rewards=self.rewards[:steps],
            rho_star=self.rho_star,
            seed=self.seed,
            truncated=self.truncated,
            rho_hat=None if self.rho_hat is None else self.rho_hat[:steps],
        )

    def regret_at(self, steps):
        return self.prefix(steps).regret_per_step

    def rows(self, epsilon=""):
        """Per-step CSV rows: step, reward, epsilon, rho_hat."""
        rho_hat = self.rho_hat if self.rho_hat is not None else [""] * self.steps
        return [
            {"step": t, "reward": float(r), "epsilon": epsilon, "rho_hat": h}
            for t, (r, h) in enumerate(zip(self.rewards, rho_hat))
        ]


def run_lifelong(
    env: EnvInstance,
    config: AgentConfig,
    steps: int,
    seed: int | None = None,
    rho_star: float | None = None,
    wall_time_limit: float | None = None,
    record_rho_hat: bool = False,
) -> RegretTrace:
    """One continuing run of ``config`` on ``env``.

    ``seed`` (default ``config.seed``) drives the agent; the environment's
    sampling stream is derived from the same seed. A run exceeding
    ``wall_time_limit`` seconds stops early and is marked ``truncated``.
    """
    if steps < 1:
        raise InvalidArgument("steps must be >= 1", parameter="steps")
    seed = config.seed if seed is None else seed
    config = config.replace(seed=seed)
    rho_star = env.rho_star() if rho_star is None else float(rho_star)
    sim = env.simulator()
    env_rng = np.random.default_rng([seed, 7])
    uni = Uniforms(env_rng)
    agent = make_agent(env.n_states, env.n_actions, config)
    rewards = np.empty(steps)
    rho_hat = np.full(steps, np.nan) if record_rho_hat else None
    deadline = None if wall_time_limit is None else time.monotonic() + wall_time_limit
    s = sim.reset(env_rng)
    t = 0
    try:
        a = agent.begin(s)
        for t in range(steps):
            s, r = sim.step(s, a, uni())
            rewards[t] = r
            a = agent.step(s, r)
            if record_rho_hat:
                rho_hat[t] = np.nan if agent.rho_hat is None else agent.rho_hat
            if deadline is not None and (t & 1023) == 0 and time.monotonic() > deadline:
                return RegretTrace(rewards[: t + 1], rho_star, seed, True, None if rho_hat is None else rho_hat[: t + 1])
    except PolymixError as exc:
        raise AgentFailure(f"{config.algorithm} failed at step {t}: {exc}", step=t) from exc
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise AgentFailure(f"{config.algorithm} failed at step {t}: {exc}", step=t) from exc
    return RegretTrace(rewards, rho_star, seed, False, rho_hat)


@dataclass
class SweepResult:
    """Grid-search outcome for one algorithm.

    ``per_config`` maps each config index to its per-seed regrets at every
    budget in ``budgets``; ``best`` maps each budget to the winning index.
    """

    configs: list
    budgets: tuple
    seeds: tuple
    per_config: dict
    best: dict
    truncated: bool = False

    def mean(self, index, budget):
        return float(np.mean(self.per_config[index][budget]))

    def std(self, index, budget):
        return float(np.std(self.per_config[index][budget]))

    def best_config(self, budget=None):
        budget = self.budgets[-1] if budget is None else budget
        return self.configs[self.best[budget]]

    def rows(self, env_id=""):
        out = []
        for i, cfg in enumerate(self.configs):
            for b in self.budgets:
                for seed, reg in zip(self.seeds, self.per_config[i][b]):
                    out.append(
                        {
                            "config": i,
                            "algorithm": cfg.algorithm,
                            "epsilon": cfg.epsilon,
                            "learning_rate": cfg.learning_rate,
                            "batch_size": cfg.batch_size,
                            "planning_steps": cfg.planning_steps,
                            "n": cfg.n,
                            "discount": cfg.discount,
                            "steps": b,
                            "seed": seed,
                            "regret_per_step": reg,
                            "env_id": env_id,
                        }
                    )
        return out


def config_grid(base: AgentConfig, **axes) -> list:
    """Cross product of ``axes`` (name -> values) applied on top of ``base``."""
    names = list(axes)
    return [base.replace(**dict(zip(names, combo))) for combo in itertools.product(*(axes[k] for k in names))]


def sweep(
    env: EnvInstance,
    configs,
    seeds,
    budgets,
    rho_star: float | None = None,
    wall_time_limit: float | None = None,
) -> SweepResult:
    """Run every config on every seed for ``max(budgets)`` steps; score each budget on prefixes.

    The best config per budget has the lowest mean regret (first on ties).
    """
    configs = list(configs)
    if not configs:
        raise InvalidArgument("the config grid is empty", parameter="configs")
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise InvalidArgument("need at least one seed", parameter="seeds")
    budgets = tuple(sorted(int(b) for b in budgets))
    rho_star = env.rho_star() if rho_star is None else rho_star
    per_config = {}
    truncated = False
    for i, cfg in enumerate(configs):
        per_config[i] = {b: [] for b in budgets}
        for seed in seeds:
            trace = run_lifelong(env, cfg, budgets[-1], seed, rho_star, wall_time_limit)
            truncated |= trace.truncated
            for b in budgets:
                per_config[i][b].append(trace.regret_at(min(b, trace.steps)))
    best = {b: min(range(len(configs)), key=lambda i: (np.mean(per_config[i][b]), i)) for b in budgets}
    return SweepResult(configs, budgets, seeds, per_config, best, truncated)


@dataclass
class TunedResult:
    """Best config per budget (chosen on tuning seeds) evaluated on fresh seeds."""

    algorithm: str
    search: SweepResult
    eval_regrets: dict = field(default_factory=dict)

    def mean(self, budget):
        return float(np.mean(self.eval_regrets[budget]))

    def std(self, budget):
        return float(np.std(self.eval_regrets[budget]))


def tune_and_evaluate(env, configs, tune_seeds, eval_seeds, budgets, rho_star=None, wall_time_limit=None):
    """Grid search on ``tune_seeds``, then rerun each budget's winner on ``eval_seeds``."""
    rho_star = env.rho_star() if rho_star is None else rho_star
    search = sweep(env, configs, tune_seeds, budgets, rho_star, wall_time_limit)
    result = TunedResult(configs[0].algorithm, search)
    # each winner runs only as long as the largest budget it wins
    horizon = {}
    for b in search.budgets:
        horizon[search.best[b]] = b
    runs = {
        idx: sweep(env, [configs[idx]], eval_seeds, [b for b in search.budgets if b <= top], rho_star, wall_time_limit)
        for idx, top in horizon.items()
    }
    for b in search.budgets:
        result.eval_regrets[b] = runs[search.best[b]].per_config[0][b]
    return result


@dataclass
class ScalingStudy:
    """A measured quantity along one parameter axis, with linear and log-log fits."""

    axis: str
    quantity: str
    points: np.ndarray
    values: np.ndarray
    normalized: np.ndarray | None
    slope: float
    intercept: float
    r2: float
    loglog_slope: float
    loglog_r2: float

    def rows(self, env_id=""):
        out = []
        for i, (x, v) in enumerate(zip(self.points, self.values)):
            row = {"axis": self.axis, "point": float(x), "quantity": self.quantity, "value": float(v), "env_id": env_id}
            row["normalized"] = "" if self.normalized is None else float(self.normalized[i])
            out.append(row)
        return out

    def summary(self):
        return {
            "axis": self.axis,
            "quantity": self.quantity,
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
            "loglog_slope": self.loglog_slope,
            "loglog_r2": self.loglog_r2,
        }


def linear_fit(x, y):
    """Least-squares ``y = slope x + intercept``; returns ``(slope, intercept, r2)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def fit_study(axis, quantity, points, values, normalizer=None, n_measurements=None):
    """Linear and log-log least-squares fits of ``values`` against ``points``.

    At least four measurements are required; ``n_measurements`` lets averaged
    values count the raw measurements behind them.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    count = points.size if n_measurements is None else n_measurements
    if count < 4 or points.size < 2:
        raise InvalidArgument("a scaling fit needs at least 4 measurements", parameter="points")
    slope, intercept, r2 = linear_fit(points, values)
    if np.all(points > 0) and np.all(values > 0):
        ll_slope, _, ll_r2 = linear_fit(np.log(points), np.log(values))
    else:
        ll_slope, ll_r2 = float("nan"), float("nan")
    normalized = None if normalizer is None else values / np.asarray(normalizer, dtype=float)
    return ScalingStudy(axis, quantity, points, values, normalized, slope, intercept, r2, ll_slope, ll_r2)


def diameter_study(ds=(3, 5, 7, 9, 11, 13, 15), seed=0):
    """``D*`` of the goal grid against ``|S| = d^2``."""
    sizes = [d * d for d in ds]
    values = [min_diameter(make_goal_grid(d, seed=seed).mdp) for d in ds]
    return fit_study("n_states", "min_diameter", sizes, values)


def mixing_scaling_study(
    axis: str,
    points,
    relative_errors=(0.1,),
    seeds=range(10),
    fixed=None,
    d: int = 3,
):
    """Exact mean epsilon-return mixing time of the goal-seeking policy on cyclic rooms.

    ``axis`` is ``"n_tasks"`` (number of rooms ``|Z|``) or ``"tau"``; ``fixed``
    holds the other one.
    ``values`` are per-point seed means, the fits run on those, and
    ``normalized`` divides them by ``tau |Z|``. Returns one study per
    relative error.
    """
    if axis not in ("n_tasks", "tau"):
        raise InvalidArgument("axis must be 'n_tasks' or 'tau'", parameter="axis")
    fixed = dict(fixed or {})
    seeds = list(seeds)
    points = list(points)
    rel = np.atleast_1d(np.asarray(relative_errors, dtype=float))
    raw = np.empty((len(points), len(seeds), rel.size))
    for i, p in enumerate(points):
        q = {**fixed, axis: p}
        N, tau = int(q["n_tasks"]), int(q["tau"])
        for j, seed in enumerate(seeds):
            env = make_cyclic_rooms_tau(N, d, c=tau / d, x=1.0, seed=seed)
            rep = return_mixing_time_exact(env.mdp, env.reference_policy, rel, relative=True, tau=tau)
            raw[i, j] = rep.mean_tret
    norm = [p * fixed["tau"] if axis == "n_tasks" else p * fixed["n_tasks"] for p in points]
    return [
        fit_study(axis, f"tret_mean@rel{e:g}", points, raw[:, :, k].mean(axis=1), norm, n_measurements=raw[:, :, k].size)
        for k, e in enumerate(rel)
    ]
