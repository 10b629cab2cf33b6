"""Mixing times, return mixing times, hitting times, diameters and bottlenecks.

Exact quantities work on the induced kernel directly; the empirical estimator
works from rollouts of a simulator and only ever sees rewards.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .errors import ConvergenceError, DegenerateRegion, InvalidArgument, SolverError
from .mdp import (
    MAX_DENSE_STATES,
    MarkovChain,
    PolicyTable,
    StationaryDistribution,
    TabularMdp,
    differential_value,
    induce_chain,
    policy_reward,
    steady_state,
)
from .sim import simulate_chain

DEFAULT_MIXING_CAP = 10_000

CSV_COLUMNS = ("quantity", "epsilon", "relative_error", "value", "stderr", "seed", "env_id")


def _row(quantity, value, epsilon="", relative_error="", stderr="", seed="", env_id=""):
    return dict(zip(CSV_COLUMNS, (quantity, epsilon, relative_error, value, stderr, seed, env_id)))


@dataclass
class MixingReport:
    """Per-start-state epsilon-return mixing times over a grid of epsilons.

    ``per_state_tret`` has one row per start point (every state for the exact
    operation, every tracked visit point for the empirical one) and one column
    per epsilon; excluded empirical points hold NaN.
    """

    epsilon_grid: np.ndarray
    relative_error_grid: np.ndarray
    start_states: np.ndarray
    per_state_tret: np.ndarray
    mean_tret: np.ndarray
    max_tret: np.ndarray
    rho_estimate: float
    horizon_used: int
    n_start_states: int
    source: str
    n_excluded: np.ndarray = field(default=None)
    mu_weighted_tret: np.ndarray | None = None

    def rows(self, seed="", env_id=""):
        out = []
        for k, (eps, rel) in enumerate(zip(self.epsilon_grid, self.relative_error_grid)):
            out.append(_row("tret_mean", self.mean_tret[k], eps, rel, seed=seed, env_id=env_id))
            out.append(_row("tret_max", self.max_tret[k], eps, rel, seed=seed, env_id=env_id))
            if self.mu_weighted_tret is not None:
                out.append(_row("tret_mu_weighted", self.mu_weighted_tret[k], eps, rel, seed=seed, env_id=env_id))
        out.append(_row("rho", self.rho_estimate, seed=seed, env_id=env_id))
        out.append(_row("horizon", self.horizon_used, seed=seed, env_id=env_id))
        return out

    def to_dict(self):
        d = {
            "source": self.source,
            "epsilon_grid": self.epsilon_grid.tolist(),
            "relative_error_grid": self.relative_error_grid.tolist(),
            "mean_tret": self.mean_tret.tolist(),
            "max_tret": self.max_tret.tolist(),
            "rho_estimate": self.rho_estimate,
            "horizon_used": self.horizon_used,
            "n_start_states": self.n_start_states,
        }
        if self.n_excluded is not None:
            d["n_excluded"] = np.asarray(self.n_excluded).tolist()
        if self.mu_weighted_tret is not None:
            d["mu_weighted_tret"] = self.mu_weighted_tret.tolist()
        return d


@dataclass
class DiameterReport:
    hitting: np.ndarray
    policy_diameter: float
    graph_diameter: float
    min_diameter: float | None = None

    def rows(self, seed="", env_id=""):
        out = [
            _row("policy_diameter", self.policy_diameter, seed=seed, env_id=env_id),
            _row("graph_diameter", self.graph_diameter, seed=seed, env_id=env_id),
        ]
        if self.min_diameter is not None:
            out.append(_row("min_diameter", self.min_diameter, seed=seed, env_id=env_id))
        return out

    def to_dict(self):
        return {
            "policy_diameter": self.policy_diameter,
            "graph_diameter": self.graph_diameter,
            "min_diameter": self.min_diameter,
        }


@dataclass
class BottleneckReport:
    region: tuple
    boundary: tuple
    mu_region: float
    edge_flow: float
    inflow: float
    bottleneck_ratio: float
    residence_time_analytic: float
    residence_time_simulated: float | None = None
    residence_stderr: float | None = None

    def rows(self, seed="", env_id=""):
        out = [
            _row("mu_region", self.mu_region, seed=seed, env_id=env_id),
            _row("edge_flow", self.edge_flow, seed=seed, env_id=env_id),
            _row("bottleneck_ratio", self.bottleneck_ratio, seed=seed, env_id=env_id),
            _row("residence_time_analytic", self.residence_time_analytic, seed=seed, env_id=env_id),
        ]
        if self.residence_time_simulated is not None:
            out.append(
                _row(
                    "residence_time_simulated",
                    self.residence_time_simulated,
                    stderr=self.residence_stderr,
                    seed=seed,
                    env_id=env_id,
                )
            )
        return out

    def to_dict(self):
        return {
            "region_size": len(self.region),
            "boundary_size": len(self.boundary),
            "mu_region": self.mu_region,
            "edge_flow": self.edge_flow,
            "bottleneck_ratio": self.bottleneck_ratio,
            "residence_time_analytic": self.residence_time_analytic,
            "residence_time_simulated": self.residence_time_simulated,
            "residence_stderr": self.residence_stderr,
        }


def total_variation(p, q):
    """Row-wise total variation distance (``0.5 * L1``)."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def _check_eps(eps):
    if not 0 < eps < 1:
        raise InvalidArgument(f"eps must lie in (0, 1), got {eps}", parameter="eps")


def exact_mixing_time(chain: MarkovChain, eps: float = 0.25, horizon_cap: int = DEFAULT_MIXING_CAP, mu=None) -> int:
    """Smallest ``h >= 0`` with ``max_s0 TV(P^h(s0, .), mu) <= eps``.

    Raises ``ConvergenceError`` carrying the last TV value if ``horizon_cap``
    applications of the kernel are not enough (periodic or very slow chains).
    """
    _check_eps(eps)
    P = chain.dense()
    mu = steady_state(chain).mu if mu is None else np.asarray(mu)
    M = np.eye(chain.n_states)
    tv = np.inf
    for h in range(horizon_cap + 1):
        tv = total_variation(M, mu).max()
        if tv <= eps:
            return h
        M = M @ P
    raise ConvergenceError(
        f"TV distance still {tv:.4g} > {eps} after {horizon_cap} steps", last_value=float(tv), iterations=horizon_cap
    )


def cesaro_mixing_time(chain: MarkovChain, eps: float = 0.25, horizon_cap: int = DEFAULT_MIXING_CAP, mu=None) -> int:
    """Smallest ``h >= 1`` whose Cesaro average ``(1/h) sum_{t<h} P^t`` is eps-close to mu."""
    _check_eps(eps)
    P = chain.dense()
    mu = steady_state(chain).mu if mu is None else np.asarray(mu)
    M = np.eye(chain.n_states)
    total = np.zeros_like(M)
    tv = np.inf
    for h in range(1, horizon_cap + 1):
        total += M
        tv = total_variation(total / h, mu).max()
        if tv <= eps:
            return h
        M = M @ P
    raise ConvergenceError(
        f"Cesaro TV still {tv:.4g} > {eps} after {horizon_cap} steps", last_value=float(tv), iterations=horizon_cap
    )


def _eps_grid(eps, rho, relative):
    grid = np.atleast_1d(np.asarray(eps, dtype=float))
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0):
        raise InvalidArgument("epsilon values must be positive", parameter="eps")
    if relative:
        if rho <= 0:
            raise InvalidArgument("relative errors need a positive reward rate", parameter="eps")
        return grid * rho, grid
    rel = grid / rho if rho > 0 else np.full_like(grid, np.inf)
    return grid, rel


def default_horizon_cap(chain: MarkovChain, tau: int | None = None) -> int:
    """``1000 * tau`` for switching environments, else ``100 * n * t_mix(1/4)``."""
    if tau is not None:
        return 1000 * int(tau)
    if chain.n_states > 2000:
        raise InvalidArgument("pass horizon_cap explicitly for chains this large", parameter="horizon_cap")
    t_mix = exact_mixing_time(chain, 0.25)
    return 100 * chain.n_states * max(t_mix, 1)


def return_mixing_time_exact(
    mdp: TabularMdp,
    policy: PolicyTable,
    eps,
    horizon_cap: int | None = None,
    relative: bool = False,
    tau: int | None = None,
) -> MixingReport:
    """Exact epsilon-return mixing time for every start state.

    ``rho(pi, s, h) = (1/h) sum_{t=1..h} (P^{t-1} r_pi)(s)`` is tracked for
    ``h = 1 .. horizon_cap`` and the per-state time is one past the last
    violating horizon (so at least 1). ``eps`` may be a scalar or a grid;
    with ``relative=True`` it is read as ``eps / rho``.

    Raises ``ConvergenceError`` if some state still violates at the cap; the
    largest violating horizon is the cap itself and is reported.
    """
    chain = induce_chain(mdp, policy)
    mu = steady_state(chain).mu
    r = policy_reward(mdp, policy)
    rho = float(mu @ r)
    eps_abs, rel = _eps_grid(eps, rho, relative)
    cap = default_horizon_cap(chain, tau) if horizon_cap is None else int(horizon_cap)
    if cap < 1:
        raise InvalidArgument("horizon_cap must be >= 1", parameter="horizon_cap")
    P = chain.kernel
    n = mdp.n_states
    # sum_{t<h} P^t (r - rho) = (I - P^h) bias, so |rho(s, h) - rho| <= span(bias) / h
    # and no violation can occur once h > span(bias) / eps
    try:
        bias = differential_value(mdp, policy).bias
        last_possible = int(np.ptp(bias) / eps_abs.min()) + 1
    except SolverError:
        last_possible = cap
    stop = min(cap, last_possible)
    v = r.copy()
    total = np.zeros(n)
    last_bad = np.zeros((n, eps_abs.size), dtype=np.int64)
    # tiny slack so that exact ties survive floating-point drift in the sums
    thresh = eps_abs[None, :] + 1e-12
    for h in range(1, stop + 1):
        total += v
        dev = np.abs(total / h - rho)
        bad = dev[:, None] > thresh
        if bad.any():
            last_bad[bad] = h
        v = P @ v
    if stop == cap and np.any(last_bad == cap):
        raise ConvergenceError(
            f"return-mixing clause violated at the horizon cap h'={cap}", last_value=cap, iterations=cap
        )
    tret = (last_bad + 1).astype(float)
    return MixingReport(
        epsilon_grid=eps_abs,
        relative_error_grid=rel,
        start_states=np.arange(n),
        per_state_tret=tret,
        mean_tret=tret.mean(axis=0),
        max_tret=tret.max(axis=0),
        rho_estimate=rho,
        horizon_used=stop,
        n_start_states=n,
        source="exact",
        n_excluded=np.zeros(eps_abs.size, dtype=int),
        mu_weighted_tret=mu @ tret,
    )


def reservoir_indices(stream_length, size, rng):
    """Uniform sample (Algorithm R) of ``size`` time indices from ``1..stream_length``.

    Returns the surviving indices in increasing order. Each index is admitted
    with probability ``size / h`` at time ``h`` and evicts a uniformly chosen
    incumbent, exactly as a one-pass stream would.
    """
    reservoir = list(range(1, min(size, stream_length) + 1))
    for h in range(size + 1, stream_length + 1):
        j = int(rng.integers(h))
        if j < size:
            reservoir[j] = h
    return np.sort(np.asarray(reservoir, dtype=np.int64))


def _suffix_tret(suffix, rho_hat, eps_abs):
    """Algorithm-1 reduction for one tracked point; NaN where no h qualifies."""
    out = np.full(eps_abs.size, np.nan)
    if suffix.size == 0:
        return out
    avg = np.cumsum(suffix) / np.arange(1, suffix.size + 1)
    dev = np.abs(avg - rho_hat)
    for k, e in enumerate(eps_abs):
        bad = np.flatnonzero(dev > e + 1e-12)
        if bad.size == 0:
            out[k] = 1.0
        elif bad[-1] < suffix.size - 1:
            out[k] = bad[-1] + 2.0
    return out


def return_mixing_time_empirical(
    env,
    policy: PolicyTable,
    eps,
    max_tracked_states: int = 100,
    horizon: int = 1_000_000,
    seed: int = 0,
    relative: bool = False,
) -> MixingReport:
    """Rollout estimate of the epsilon-return mixing time.

    ``env`` needs ``reset(rng) -> state`` and ``rollout(policy, steps, rng,
    start) -> (states, actions, rewards)``. One rollout of ``horizon`` steps
    estimates rho; a second, independent rollout of the same length feeds a
    time-uniform reservoir of at most ``max_tracked_states`` visit points.
    For each tracked point the suffix reward stream is reduced to the
    smallest ``h`` after which every running average stays within eps of the
    rho estimate. Points that never settle are excluded and counted.
    """
    if max_tracked_states < 1:
        raise InvalidArgument("max_tracked_states must be >= 1", parameter="max_tracked_states")
    if horizon < 2:
        raise InvalidArgument("horizon must be >= 2", parameter="horizon")
    rng = np.random.default_rng(seed)
    _, _, rewards = env.rollout(policy, horizon, rng, env.reset(rng))
    rho_hat = float(np.mean(rewards))
    eps_abs, rel = _eps_grid(eps, rho_hat, relative)

    states, _, rewards = env.rollout(policy, horizon, rng, env.reset(rng))
    points = reservoir_indices(horizon, max_tracked_states, rng)
    # point h starts at s_{h+1}; its history is r_{h+1}, r_{h+2}, ...
    points = points[points < horizon]
    tret = np.array([_suffix_tret(rewards[h:], rho_hat, eps_abs) for h in points]).reshape(-1, eps_abs.size)
    excluded = np.isnan(tret).sum(axis=0)
    if tret.shape[0] == 0 or np.any(excluded == tret.shape[0]):
        raise ConvergenceError("every tracked point was excluded; lengthen the horizon", last_value=int(excluded.max()))
    return MixingReport(
        epsilon_grid=eps_abs,
        relative_error_grid=rel,
        start_states=states[points],
        per_state_tret=tret,
        mean_tret=np.nanmean(tret, axis=0),
        max_tret=np.nanmax(tret, axis=0),
        rho_estimate=rho_hat,
        horizon_used=horizon,
        n_start_states=int(tret.shape[0]),
        source="empirical",
        n_excluded=excluded,
    )


def expected_hitting_times(chain: MarkovChain) -> np.ndarray:
    """``hitting[s0, s1] = E[t_hit(s1 | s0)]`` with ``hitting[s, s] = 0``.

    For each target solves ``m(s0) = 1 + sum_{s' != s1} P(s'|s0) m(s')``.
    """
    P = chain.dense()
    n = chain.n_states
    out = np.zeros((n, n))
    for target in range(n):
        others = np.flatnonzero(np.arange(n) != target)
        A = np.eye(n - 1) - P[np.ix_(others, others)]
        try:
            m = np.linalg.solve(A, np.ones(n - 1))
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"state {target} is unreachable from some state") from exc
        if not np.all(np.isfinite(m)) or (m.size and m.min() < 1 - 1e-9):
            raise SolverError(f"state {target} is unreachable from some state", condition=float(np.linalg.cond(A)))
        out[others, target] = m
    return out


def first_return_times(chain: MarkovChain, stationary: StationaryDistribution | None = None) -> np.ndarray:
    """Mean first return time ``1 / mu(s)`` (not used in diameters)."""
    mu = (stationary or steady_state(chain)).mu
    with np.errstate(divide="ignore"):
        return 1.0 / mu


def graph_diameter(chain: MarkovChain) -> float:
    """Unweighted diameter of the graph with edges where ``P(s'|s) + P(s|s') > 0``."""
    P = chain.kernel
    adj = sp.csr_array(P) if chain.is_sparse else sp.csr_array(np.asarray(P))
    adj = ((adj + adj.T) > 0).astype(float)
    dist = shortest_path(adj, unweighted=True, directed=False)
    return float(dist.max())


def policy_diameter(chain: MarkovChain) -> DiameterReport:
    """Max expected hitting time over ordered pairs, plus the support-graph diameter."""
    hitting = expected_hitting_times(chain)
    return DiameterReport(
        hitting=hitting,
        policy_diameter=float(hitting.max()),
        graph_diameter=graph_diameter(chain),
    )


def _reachability(mdp):
    support = (mdp.stacked() != 0) if mdp.is_sparse else (mdp.stacked() > 0)
    n, n_actions = mdp.n_states, mdp.n_actions
    support = sp.csr_array(support, dtype=float)
    pick = sp.csr_array(
        (np.ones(n * n_actions), (np.repeat(np.arange(n), n_actions), np.arange(n * n_actions))),
        shape=(n, n * n_actions),
    )
    adj = sp.csr_array(pick @ support)
    return np.isfinite(shortest_path(adj, unweighted=True, directed=True))


def min_diameter(
    mdp: TabularMdp,
    tol: float = 1e-9,
    max_iter: int = 1_000_000,
    skip_unreachable: bool = False,
) -> float:
    """``D* = max_{s0, s1} min_pi E[t_hit(s1 | s0)]``.

    For every target runs stochastic-shortest-path value iteration
    ``V(s) = 1 + min_a sum_s' T(s'|s, a) V(s')``, ``V(target) = 0``, all
    targets at once. Targets that some state cannot reach make D* infinite;
    with ``skip_unreachable`` they are dropped instead of raising.
    """
    n = mdp.n_states
    reach = _reachability(mdp)
    targets = np.flatnonzero(reach.all(axis=0))
    if targets.size < n and not skip_unreachable:
        raise SolverError(f"{n - targets.size} states are unreachable from some state; D* is infinite")
    if targets.size == 0:
        raise SolverError("no state is reachable from every other state")
    stacked = mdp.stacked()
    if mdp.is_sparse:
        stacked_t = sp.csr_array(stacked.T)
    else:
        stacked_t = stacked.T
    n_t = targets.size
    V = np.zeros((n_t, n))
    rows = np.arange(n_t)
    delta = np.inf
    for it in range(max_iter):
        # (n_t, n*A) -> (n_t, n, A)
        Q = (stacked_t.T @ V.T).T if mdp.is_sparse else V @ stacked_t
        new = 1.0 + Q.reshape(n_t, n, mdp.n_actions).min(axis=2)
        new[rows, targets] = 0.0
        delta = np.abs(new - V).max()
        V = new
        if delta < tol * max(1.0, V.max()):
            break
    else:
        raise ConvergenceError(
            f"shortest-path value iteration residual {delta:.3e} after {max_iter} sweeps",
            last_value=float(delta),
            iterations=max_iter,
        )
    return float(V.max())


def _region_mask(n, region):
    mask = np.zeros(n, dtype=bool)
    idx = np.asarray(list(region), dtype=int)
    if idx.size == 0:
        raise InvalidArgument("region must be nonempty", parameter="region")
    if idx.min() < 0 or idx.max() >= n:
        raise InvalidArgument("region contains out-of-range states", parameter="region")
    mask[idx] = True
    return mask


def bottleneck_ratio(chain: MarkovChain, mu: StationaryDistribution | None, region) -> BottleneckReport:
    """Stationary flow out of ``region`` over its stationary mass, and its reciprocal.

    The boundary is the set of region states with positive one-step exit
    probability.
    """
    n = chain.n_states
    mask = _region_mask(n, region)
    if mask.all():
        raise InvalidArgument("region must be a proper subset of the state space", parameter="region")
    mu = (mu or steady_state(chain)).mu
    mu_region = float(mu[mask].sum())
    if mu_region <= 1e-12:
        raise DegenerateRegion(f"region has stationary mass {mu_region:.3e}")
    P = chain.kernel
    if chain.is_sparse:
        exit_prob = np.asarray(P[mask][:, ~mask].sum(axis=1)).ravel()
        enter = np.asarray(P[~mask][:, mask].sum(axis=1)).ravel()
    else:
        exit_prob = P[np.ix_(mask, ~mask)].sum(axis=1)
        enter = P[np.ix_(~mask, mask)].sum(axis=1)
    flow = float(mu[mask] @ exit_prob)
    inflow = float(mu[~mask] @ enter)
    region_states = np.flatnonzero(mask)
    ratio = flow / mu_region
    return BottleneckReport(
        region=tuple(region_states.tolist()),
        boundary=tuple(region_states[exit_prob > 0].tolist()),
        mu_region=mu_region,
        edge_flow=flow,
        inflow=inflow,
        bottleneck_ratio=ratio,
        residence_time_analytic=math.inf if ratio == 0 else 1.0 / ratio,
    )


def sojourn_lengths(in_region):
    """Lengths of maximal runs of ``True`` that start and end strictly inside the array."""
    x = np.asarray(in_region, dtype=np.int8)
    edges = np.diff(x)
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    ends = ends[ends > (starts[0] if starts.size else len(x))]
    k = min(starts.size, ends.size)
    return ends[:k] - starts[:k]


def residence_time_simulated(chain: MarkovChain, region, steps: int = 1_000_000, seed: int = 0, burn_in: int | None = None):
    """Mean contiguous sojourn length inside ``region`` from one long simulation.

    Only sojourns that begin after the burn-in and end before the final step
    are counted. Returns ``(mean, standard_error)``; a region equal to the
    whole state space never exits and yields ``(inf, nan)``.
    """
    mask = _region_mask(chain.n_states, region)
    if mask.all():
        return math.inf, math.nan
    if burn_in is None:
        try:
            burn_in = exact_mixing_time(chain, 0.25) if chain.n_states <= 2000 else steps // 10
        except ConvergenceError:
            burn_in = steps // 10
    rng = np.random.default_rng(seed)
    path = simulate_chain(chain.kernel, burn_in + steps, rng)
    lengths = sojourn_lengths(mask[path[burn_in:]])
    if lengths.size == 0:
        raise DegenerateRegion("region was never entered and left during the simulation (visit count 0)")
    se = lengths.std(ddof=1) / math.sqrt(lengths.size) if lengths.size > 1 else math.nan
    return float(lengths.mean()), float(se)


def spectral_gap(chain: MarkovChain) -> float:
    """``1 - |lambda_2|`` for the second-largest-modulus eigenvalue."""
    if chain.n_states == 1:
        return 1.0
    try:
        eig = np.linalg.eigvals(chain.dense())
    except np.linalg.LinAlgError as exc:
        raise SolverError("eigendecomposition failed") from exc
    mod = np.sort(np.abs(eig))[::-1]
    return float(1.0 - mod[1])


def conductance_bruteforce(chain: MarkovChain, mu: StationaryDistribution | None = None):
    """Exhaustive ``min_{R : mu(R) <= 1/2} bottleneck ratio`` (small chains only).

    Returns ``(ratio, region)``.
    """
    n = chain.n_states
    if n > 15:
        raise InvalidArgument("brute-force conductance is limited to n <= 15", parameter="n_states")
    mu = (mu or steady_state(chain)).mu
    P = chain.dense()
    best, best_region = math.inf, ()
    for size in range(1, n):
        for region in itertools.combinations(range(n), size):
            idx = list(region)
            m = mu[idx].sum()
            if m <= 0 or m > 0.5 + 1e-12:
                continue
            rest = [s for s in range(n) if s not in region]
            ratio = (mu[idx] @ P[np.ix_(idx, rest)].sum(axis=1)) / m
            if ratio < best:
                best, best_region = float(ratio), region
    return best, best_region


def bfs_distances(adjacency, source):
    """Hop distances from ``source`` over a dict-of-neighbours graph (test helper)."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist
