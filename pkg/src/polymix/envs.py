"""Scalable gridworld families.

Each builder returns an :class:`EnvInstance` holding the tabular MDP, the
room/task partition with its boundaries, the parameters, and a reference
goal-seeking policy. Random choices (goal cells, room starts, task sets) come
from ``numpy.random.default_rng(seed)`` and are frozen at construction.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument
from .mdp import (
    DEFAULT_SMOOTHING,
    MAX_DENSE_STATES,
    PolicyTable,
    TabularMdp,
    optimal_average_reward,
    smooth_ergodic,
)
from .sim import RowSampler, Uniforms

# grid moves: up, down, left, right
MOVES_2D = ((-1, 0), (1, 0), (0, -1), (0, 1))
ROOM_KINDS = ("cycle", "random", "curricular")


@dataclass(frozen=True)
class ScalingSpec:
    """Proportional scaling ``q_nu = q0 + nu * delta_q`` over named parameters."""

    q0: dict
    delta_q: dict
    nu: float = 0.0

    def __post_init__(self):
        if set(self.delta_q) - set(self.q0):
            raise InvalidArgument("delta_q names parameters missing from q0", parameter="delta_q")
        if any(v < 0 for v in self.delta_q.values()):
            raise InvalidArgument("delta_q entries must be nonnegative", parameter="delta_q")
        if not any(v > 0 for v in self.delta_q.values()):
            raise InvalidArgument("at least one delta_q entry must be positive", parameter="delta_q")
        if self.nu < 0:
            raise InvalidArgument("nu must be nonnegative", parameter="nu")

    def params(self, nu: float | None = None, integer=()):
        nu = self.nu if nu is None else nu
        if nu < 0:
            raise InvalidArgument("nu must be nonnegative", parameter="nu")
        out = {}
        for name, base in self.q0.items():
            value = base + nu * self.delta_q.get(name, 0.0)
            out[name] = int(math.floor(value + 1e-9)) if name in integer else float(value)
        return out


@dataclass(frozen=True)
class RegionMap:
    regions: tuple
    boundaries: tuple
    task_of_state: np.ndarray

    @property
    def n_regions(self):
        return len(self.regions)


@dataclass(frozen=True, eq=False)
class EnvInstance:
    """A generated environment.

    ``mdp`` is the MDP agents and analyses use (smoothed where the family
    needs it); ``raw_mdp`` is the unsmoothed dynamics. ``reset_dist`` is the
    episode-start distribution used by simulators.
    """

    mdp: TabularMdp
    region_map: RegionMap
    params: dict
    family_id: str
    raw_mdp: TabularMdp
    reset_dist: np.ndarray
    reference_policy: PolicyTable
    info: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_states(self):
        return self.mdp.n_states

    @property
    def n_actions(self):
        return self.mdp.n_actions

    def rho_star(self, **kwargs):
        """Optimal reward rate of ``mdp`` (cached after the first call)."""
        if "rho_star" not in self._cache:
            self._cache["rho_star"] = optimal_average_reward(self.mdp, **kwargs)
        return self._cache["rho_star"][0]

    def optimal_policy(self):
        self.rho_star()
        return self._cache["rho_star"][1]

    def simulator(self):
        return TabularSimulator(self.mdp, self.reset_dist)


class TabularSimulator:
    """Sampling view of a tabular MDP; rewards are the table entries ``R(s, a)``."""

    def __init__(self, mdp: TabularMdp, reset_dist=None):
        self.mdp = mdp
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions
        self.rewards = mdp.rewards
        self._reward_rows = mdp.rewards.tolist()
        self.sampler = RowSampler(mdp.stacked())
        if reset_dist is None:
            reset_dist = np.full(mdp.n_states, 1.0 / mdp.n_states)
        self.reset_dist = np.asarray(reset_dist, dtype=float)
        self._reset_cum = np.cumsum(self.reset_dist)
        self._reset_cum[-1] = np.inf

    def reset(self, rng):
        return int(np.searchsorted(self._reset_cum, rng.random(), side="right"))

    def step(self, s, a, u):
        """Next state from uniform ``u`` and the reward ``R(s, a)``."""
        return self.sampler.sample(s * self.n_actions + a, u), self._reward_rows[s][a]

    def rollout(self, policy: PolicyTable, steps, rng, start=None):
        """``steps`` transitions under ``policy``; returns states, actions, rewards."""
        uni = Uniforms(rng)
        s = self.reset(rng) if start is None else int(start)
        A = self.n_actions
        if policy.deterministic_flag:
            act = policy.actions().tolist()
            choose = lambda s: act[s]  # noqa: E731
        else:
            pick = RowSampler(policy.probs)
            choose = lambda s: pick.sample(s, uni())  # noqa: E731
        states = np.empty(steps, dtype=np.int64)
        actions = np.empty(steps, dtype=np.int64)
        rewards = np.empty(steps)
        sample = self.sampler.sample
        rrows = self._reward_rows
        for t in range(steps):
            a = choose(s)
            states[t] = s
            actions[t] = a
            rewards[t] = rrows[s][a]
            s = sample(s * A + a, uni())
        return states, actions, rewards


def _grid_next(d):
    """``next[cell, a]`` for the 4-move grid with blocked off-grid moves."""
    nxt = np.empty((d * d, 4), dtype=np.int64)
    for cell in range(d * d):
        r, c = divmod(cell, d)
        for a, (dr, dc) in enumerate(MOVES_2D):
            rr, cc = r + dr, c + dc
            nxt[cell, a] = rr * d + cc if 0 <= rr < d and 0 <= cc < d else cell
    return nxt


def _manhattan(d, a, b):
    ra, ca = divmod(a, d)
    rb, cb = divmod(b, d)
    return abs(ra - rb) + abs(ca - cb)


def _toward(nxt, d, cell, goal):
    """Lowest-index move that shortens the Manhattan distance to ``goal``."""
    here = _manhattan(d, cell, goal)
    for a in range(nxt.shape[1]):
        if _manhattan(d, nxt[cell, a], goal) < here:
            return a
    return 0


def _boundaries(mdp: TabularMdp, regions):
    """Region states with positive one-step exit probability under some action."""
    n, A = mdp.n_states, mdp.n_actions
    label = np.empty(n, dtype=np.int64)
    for k, reg in enumerate(regions):
        label[reg] = k
    stacked = sp.coo_array(mdp.stacked())
    src = stacked.row // A
    leaving = (label[src] != label[stacked.col]) & (stacked.data > 0)
    exits = np.zeros(n, dtype=bool)
    exits[src[leaving]] = True
    bounds = tuple(np.asarray(reg)[exits[reg]] for reg in regions)
    return bounds, label


def _region_map(mdp, regions):
    regions = tuple(np.asarray(r, dtype=np.int64) for r in regions)
    bounds, label = _boundaries(mdp, regions)
    return RegionMap(regions=regions, boundaries=bounds, task_of_state=label)


def _finish(raw, smoothing):
    if smoothing and smoothing > 0:
        if raw.n_states > MAX_DENSE_STATES:
            raise InvalidArgument(
                f"smoothing needs a dense MDP; {raw.n_states} states is too many", parameter="smoothing"
            )
        return smooth_ergodic(raw, smoothing)
    return raw


def _check_int(name, value, low):
    if int(value) != value or value < low:
        raise InvalidArgument(f"{name} must be an integer >= {low}, got {value}", parameter=name)
    return int(value)


def make_goal_grid(d: int, seed: int = 0, smoothing: float = DEFAULT_SMOOTHING) -> EnvInstance:
    """``d x d`` grid with one rewarding goal cell.

    Entering the goal pays 1. Any action taken at the goal teleports the agent
    to a uniformly random non-goal cell, which plays the role of an episodic
    reset inside the continuing MDP.
    """
    d = _check_int("d", d, 2)
    rng = np.random.default_rng(seed)
    n = d * d
    goal = int(rng.integers(n))
    nxt = _grid_next(d)
    T = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    others = np.flatnonzero(np.arange(n) != goal)
    for s in range(n):
        if s == goal:
            T[s][:, others] = 1.0 / others.size
            continue
        for a in range(4):
            T[s, a, nxt[s, a]] = 1.0
            R[s, a] = float(nxt[s, a] == goal)
    raw = TabularMdp(T, R, r_max=1.0)
    reset = np.zeros(n)
    reset[others] = 1.0 / others.size
    policy = PolicyTable.deterministic([_toward(nxt, d, s, goal) for s in range(n)], 4)
    return EnvInstance(
        mdp=_finish(raw, smoothing),
        region_map=_region_map(raw, [np.arange(n)]),
        params={"d": d, "seed": seed, "smoothing": smoothing},
        family_id="goal_grid",
        raw_mdp=raw,
        reset_dist=reset,
        reference_policy=policy,
        info={"goal": goal},
    )


def room_layout(N, d, seed):
    """Seeded (start, goal) cells per room; room ``k`` is the same for every ``N > k``."""
    rng = np.random.default_rng(seed)
    cells = [rng.choice(d * d, size=2, replace=False) for _ in range(N)]
    return np.array([int(c[0]) for c in cells]), np.array([int(c[1]) for c in cells])


def curriculum(N):
    """Room sequence ``0, 0, 1, 0, 1, 2, ...`` up to ``0..N-1`` (length ``N(N+1)/2``)."""
    return [k for m in range(1, N + 1) for k in range(m)]


def make_rooms(
    N: int, d: int, kind: str = "cycle", seed: int = 0, smoothing: float = DEFAULT_SMOOTHING
) -> EnvInstance:
    """``N`` rooms of ``d x d`` cells linked through their goal cells.

    Reaching a room's goal pays 1; the next action moves the agent to the start
    cell of the next room: ``(k + 1) mod N`` for ``cycle``, uniform over all rooms
    for ``random``. ``curricular`` follows the room sequence of
    :func:`curriculum` and adds the position in that sequence to the state, so
    ``|S| = d^2 N (N + 1) / 2``.
    """
    N = _check_int("N", N, 2)
    d = _check_int("d", d, 2)
    if kind not in ROOM_KINDS:
        raise InvalidArgument(f"unknown room kind {kind!r}; expected one of {ROOM_KINDS}", parameter="kind")
    starts, goals = room_layout(N, d, seed)
    nxt = _grid_next(d)
    c = d * d
    seq = curriculum(N) if kind == "curricular" else list(range(N))
    L = len(seq)
    n = L * c
    rows, cols, vals = [], [], []
    R = np.zeros((n, 4))
    acts = np.zeros(n, dtype=np.int64)
    for j, room in enumerate(seq):
        for cell in range(c):
            s = j * c + cell
            if cell == goals[room]:
                if kind == "random":
                    succ = [(k * c + starts[k], 1.0 / N) for k in range(N)]
                else:
                    jn = (j + 1) % L
                    succ = [(jn * c + starts[seq[jn]], 1.0)]
                for a in range(4):
                    for t, p in succ:
                        rows.append(s * 4 + a)
                        cols.append(t)
                        vals.append(p)
                continue
            for a in range(4):
                rows.append(s * 4 + a)
                cols.append(j * c + nxt[cell, a])
                vals.append(1.0)
                R[s, a] = float(nxt[cell, a] == goals[room])
            acts[s] = _toward(nxt, d, cell, goals[room])
    stacked = sp.csr_array((vals, (rows, cols)), shape=(n * 4, n))
    raw = TabularMdp(stacked, R, r_max=1.0)
    if n <= MAX_DENSE_STATES:
        raw = raw.to_dense()
    room_of = np.repeat(np.asarray(seq), c)
    regions = [np.flatnonzero(room_of == k) for k in range(N)]
    reset = np.zeros(n)
    reset[starts[seq[0]]] = 1.0
    return EnvInstance(
        mdp=_finish(raw, smoothing),
        region_map=_region_map(raw, regions),
        params={"N": N, "d": d, "kind": kind, "seed": seed, "smoothing": smoothing},
        family_id="rooms",
        raw_mdp=raw,
        reset_dist=reset,
        reference_policy=PolicyTable.deterministic(acts, 4),
        info={"starts": starts, "goals": goals, "sequence": seq},
    )


def cyclic_tau(c, d, x):
    return int(round(c * d**x))


def make_cyclic_rooms_tau(N: int, d: int, c: float = 2.0, x: float = 1.0, seed: int = 0) -> EnvInstance:
    """Rooms that switch passively every ``tau = round(c d^x)`` steps.

    The state is ``(room, cell, phase)`` with ``phase = t mod tau``. Reaching the
    room's goal pays 1 and returns the agent to that room's start. When the
    phase wraps the agent is moved to the start of room ``(room + 1) mod N``
    whatever it did. The chain is periodic, so no smoothing is applied, and
    ``(room, cell, 0)`` is unreachable unless ``cell`` is the room's start.
    """
    N = _check_int("N", N, 2)
    d = _check_int("d", d, 2)
    if c < 2 or x < 1:
        raise InvalidArgument("need c >= 2 and x >= 1", parameter="c" if c < 2 else "x")
    tau = cyclic_tau(c, d, x)
    if tau < 2 * d:
        raise InvalidArgument(f"tau = {tau} < 2d = {2 * d}", parameter="tau")
    starts, goals = room_layout(N, d, seed)
    nxt = _grid_next(d)
    cells = d * d
    n = N * cells * tau

    def index(room, cell, phase):
        return (room * cells + cell) * tau + phase

    rows = np.arange(n * 4)
    cols = np.empty(n * 4, dtype=np.int64)
    R = np.zeros((n, 4))
    acts = np.zeros(n, dtype=np.int64)
    for room in range(N):
        for cell in range(cells):
            to_goal = _toward(nxt, d, cell, goals[room])
            for phase in range(tau):
                s = index(room, cell, phase)
                acts[s] = to_goal
                for a in range(4):
                    if phase == tau - 1:
                        t = index((room + 1) % N, starts[(room + 1) % N], 0)
                    elif cell == goals[room]:
                        t = index(room, starts[room], phase + 1)
                    else:
                        t = index(room, nxt[cell, a], phase + 1)
                        R[s, a] = float(nxt[cell, a] == goals[room])
                    cols[s * 4 + a] = t
    raw = TabularMdp(sp.csr_array((np.ones(n * 4), (rows, cols)), shape=(n * 4, n)), R, r_max=1.0)
    room_of = np.repeat(np.arange(N), cells * tau)
    regions = [np.flatnonzero(room_of == k) for k in range(N)]
    reset = np.zeros(n)
    reset[index(0, starts[0], 0)] = 1.0
    return EnvInstance(
        mdp=raw,
        region_map=_region_map(raw, regions),
        params={"N": N, "d": d, "c": c, "x": x, "tau": tau, "seed": seed},
        family_id="cyclic_rooms_tau",
        raw_mdp=raw,
        reset_dist=reset,
        reference_policy=PolicyTable.deterministic(acts, 4),
        info={"starts": starts, "goals": goals, "tau": tau},
    )


# ---------------------------------------------------------------- 3-D task grid

MOVES_3D = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
MAX_TABULAR_TASK_STATES = 200_000


def one_hot_features(pos, goal, dim):
    """Concatenated one-hot codes of the three position and three goal coordinates."""
    x = np.zeros(6 * dim)
    for k, v in enumerate(tuple(pos) + tuple(goal)):
        x[k * dim + v] = 1.0
    return x


def _step3(pos, a, dim):
    dx, dy, dz = MOVES_3D[a]
    return (
        min(max(pos[0] + dx, 0), dim - 1),
        min(max(pos[1] + dy, 0), dim - 1),
        min(max(pos[2] + dz, 0), dim - 1),
    )


def _l1(p, q):
    return abs(p[0] - q[0]) + abs(p[1] - q[1]) + abs(p[2] - q[2])


class TaskGridWorld:
    """Simulator for the 3-D task grid with passive task switching.

    Every step that strictly shortens the L1 distance to the current goal pays
    1. Arriving at the goal ends the episode and puts the agent back in the
    corner ``(0, 0, 0)``. Every ``tau`` steps the goal switches to a uniformly
    chosen different task; the position is kept.
    """

    def __init__(self, dim, tasks, tau, rng):
        self.dim = dim
        self.tasks = [tuple(int(v) for v in t) for t in tasks]
        self.tau = int(tau)
        self.rng = rng
        self.pos = (0, 0, 0)
        self.task = int(rng.integers(len(self.tasks)))
        self.phase = 0

    @property
    def goal(self):
        return self.tasks[self.task]

    def observe(self):
        return one_hot_features(self.pos, self.goal, self.dim)

    def step(self, a):
        """Apply action ``a``; returns ``(reward, episode_done)``."""
        goal = self.goal
        new = _step3(self.pos, a, self.dim)
        reward = 1.0 if _l1(new, goal) < _l1(self.pos, goal) else 0.0
        done = new == goal
        self.pos = (0, 0, 0) if done else new
        self.phase += 1
        if self.phase == self.tau:
            self.phase = 0
            if len(self.tasks) > 1:
                k = int(self.rng.integers(len(self.tasks) - 1))
                self.task = k if k < self.task else k + 1
        return reward, done


def task_set(dim, n_tasks, seed):
    rng = np.random.default_rng(seed)
    flat = rng.choice(dim**3, size=n_tasks, replace=False)
    return np.stack(np.unravel_index(flat, (dim, dim, dim)), axis=1)


def make_task_grid(
    dim: int = 10, n_tasks: int = 1, tau: int = 100, seed: int = 0, tabular: bool | None = None
) -> EnvInstance:
    """3-D grid with ``n_tasks`` seeded goal cells switching every ``tau`` steps.

    The tabular view has state ``(position, task, phase)`` and is built only
    when it has at most ``MAX_TABULAR_TASK_STATES`` states (or when ``tabular``
    forces it). ``info["tasks"]`` and :class:`TaskGridWorld` give the
    featurized simulator.
    """
    dim = _check_int("dim", dim, 2)
    n_tasks = _check_int("n_tasks", n_tasks, 1)
    tau = _check_int("tau", tau, 1)
    if n_tasks > dim**3:
        raise InvalidArgument(f"n_tasks = {n_tasks} exceeds the {dim**3} cells", parameter="n_tasks")
    tasks = task_set(dim, n_tasks, seed)
    params = {"dim": dim, "n_tasks": n_tasks, "tau": tau, "seed": seed}
    info = {"tasks": tasks, "tau": tau, "dim": dim}
    n = dim**3 * n_tasks * tau
    if tabular is None:
        tabular = n <= MAX_TABULAR_TASK_STATES
    if not tabular:
        return EnvInstance(
            mdp=None,
            region_map=None,
            params=params,
            family_id="task_grid",
            raw_mdp=None,
            reset_dist=None,
            reference_policy=None,
            info=info,
        )
    cells = dim**3
    coords = np.stack(np.unravel_index(np.arange(cells), (dim, dim, dim)), axis=1)

    def index(cell, z, phase):
        return (z * cells + cell) * tau + phase

    rows, cols, vals = [], [], []
    R = np.zeros((n, 6))
    acts = np.zeros(n, dtype=np.int64)
    for z, goal in enumerate(map(tuple, tasks)):
        for cell in range(cells):
            pos = tuple(coords[cell])
            here = _l1(pos, goal)
            best = None
            for a in range(6):
                new = _step3(pos, a, dim)
                closer = _l1(new, goal) < here
                if closer and best is None:
                    best = a
                landing = 0 if new == goal else np.ravel_multi_index(new, (dim,) * 3)
                for phase in range(tau):
                    s = index(cell, z, phase)
                    R[s, a] = float(closer)
                    if phase == tau - 1 and n_tasks > 1:
                        for z2 in range(n_tasks):
                            if z2 != z:
                                rows.append(s * 6 + a)
                                cols.append(index(landing, z2, 0))
                                vals.append(1.0 / (n_tasks - 1))
                    else:
                        rows.append(s * 6 + a)
                        cols.append(index(landing, z, (phase + 1) % tau))
                        vals.append(1.0)
            for phase in range(tau):
                acts[index(cell, z, phase)] = 0 if best is None else best
    mdp = TabularMdp(sp.csr_array((vals, (rows, cols)), shape=(n * 6, n)), R, r_max=1.0)
    task_of = np.repeat(np.arange(n_tasks), cells * tau)
    reset = np.zeros(n)
    reset[[index(0, z, 0) for z in range(n_tasks)]] = 1.0 / n_tasks
    return EnvInstance(
        mdp=mdp,
        region_map=_region_map(mdp, [np.flatnonzero(task_of == z) for z in range(n_tasks)]),
        params=params,
        family_id="task_grid",
        raw_mdp=mdp,
        reset_dist=reset,
        reference_policy=PolicyTable.deterministic(acts, 6),
        info=info,
    )


# ---------------------------------------------------------------- scaling

FAMILIES = {
    "goal_grid": (make_goal_grid, {"d"}),
    "rooms": (make_rooms, {"N", "d"}),
    "cyclic_rooms_tau": (make_cyclic_rooms_tau, {"N", "d"}),
    "task_grid": (make_task_grid, {"dim", "n_tasks", "tau"}),
}


def scale(family_id: str, spec: ScalingSpec, nu: float | None = None, seed: int = 0, **fixed) -> EnvInstance:
    """Instance of ``family_id`` at ``q_nu``; integer parameters are floored.

    ``fixed`` passes non-scaled keyword arguments such as ``kind``.
    """
    if family_id not in FAMILIES:
        raise InvalidArgument(f"unknown family {family_id!r}", parameter="family")
    builder, integer = FAMILIES[family_id]
    params = spec.params(nu, integer=integer)
    return builder(**params, **fixed, seed=seed)


def make_env(family: str, seed: int = 0, **params) -> EnvInstance:
    """Build an instance from a flat parameter record (config-file keys)."""
    if family not in FAMILIES:
        raise InvalidArgument(f"unknown family {family!r}", parameter="family")
    builder = FAMILIES[family][0]
    accepted = set(inspect.signature(builder).parameters)
    unknown = set(params) - accepted
    if unknown:
        raise InvalidArgument(f"{family} does not take {sorted(unknown)}", parameter=sorted(unknown)[0])
    return builder(seed=seed, **params)
