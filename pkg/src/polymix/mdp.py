"""Finite MDPs, policies, induced Markov chains and exact steady-state quantities.

Transition tensors are stored either dense, shape ``(n_states, n_actions,
n_states)``, or as a sparse CSR matrix of shape ``(n_states * n_actions,
n_states)`` whose row ``s * n_actions + a`` holds ``T(.|s, a)``. Dense is the
default for small problems; the sparse form exists for the phase-augmented
families whose state counts run into the tens of thousands.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DimensionMismatch, InvalidArgument, SolverError

STOCHASTIC_TOL = 1e-12
STEADY_STATE_TOL = 1e-10
BIAS_TOL = 1e-8
DEFAULT_SMOOTHING = 1e-6

# above this many states smoothing would densify the tensor beyond desk memory
MAX_DENSE_STATES = 5000


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_rows(rows, what, tol=STOCHASTIC_TOL):
    """Raise unless every row of ``rows`` (dense 2-D or sparse) is a distribution."""
    if sp.issparse(rows):
        if rows.nnz and rows.data.min() < 0:
            raise InvalidArgument(f"{what} has negative entries")
        sums = np.asarray(rows.sum(axis=1)).ravel()
    else:
        if rows.size and rows.min() < 0:
            raise InvalidArgument(f"{what} has negative entries")
        sums = rows.sum(axis=-1)
    err = np.abs(sums - 1.0)
    if err.size and err.max() > tol:
        bad = int(np.argmax(err))
        raise InvalidArgument(f"{what} row {bad} sums to {sums.ravel()[bad]!r}, not 1")


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP ``<S, A, T, R>`` with rewards in ``[0, r_max]``."""

    transitions: np.ndarray | sp.csr_array
    rewards: np.ndarray
    r_max: float | None = None
    n_states: int = field(init=False)
    n_actions: int = field(init=False)

    def __post_init__(self):
        rewards = _readonly(self.rewards)
        if rewards.ndim != 2:
            raise DimensionMismatch("rewards must be 2-D (n_states, n_actions)", axis="rewards")
        n, n_actions = rewards.shape
        if n < 1 or n_actions < 1:
            raise InvalidArgument("MDP needs at least one state and one action")
        if sp.issparse(self.transitions):
            trans = sp.csr_array(self.transitions, dtype=float, copy=True)
            if trans.shape != (n * n_actions, n):
                raise DimensionMismatch(
                    f"sparse transitions must have shape {(n * n_actions, n)}, got {trans.shape}",
                    axis="transitions",
                )
            trans.sum_duplicates()
            trans.data.setflags(write=False)
            _check_rows(trans, "transition tensor")
        else:
            trans = _readonly(self.transitions)
            if trans.shape != (n, n_actions, n):
                axis = "next_state" if trans.ndim == 3 and trans.shape[:2] == (n, n_actions) else "transitions"
                raise DimensionMismatch(
                    f"transitions must have shape {(n, n_actions, n)}, got {trans.shape}", axis=axis
                )
            _check_rows(trans.reshape(n * n_actions, n), "transition tensor")
        r_max = float(rewards.max()) if self.r_max is None else float(self.r_max)
        if rewards.min() < 0 or rewards.max() > r_max:
            raise InvalidArgument(f"rewards must lie in [0, r_max={r_max}]")
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "r_max", r_max)
        object.__setattr__(self, "n_states", n)
        object.__setattr__(self, "n_actions", n_actions)

    @property
    def is_sparse(self):
        return sp.issparse(self.transitions)

    def stacked(self):
        """Transition rows as an ``(n_states * n_actions, n_states)`` matrix."""
        if self.is_sparse:
            return self.transitions
        return self.transitions.reshape(self.n_states * self.n_actions, self.n_states)

    def dense_transitions(self):
        if self.is_sparse:
            if self.n_states > MAX_DENSE_STATES:
                raise InvalidArgument(
                    f"refusing to densify a {self.n_states}-state MDP", parameter="n_states"
                )
            return self.transitions.toarray().reshape(self.n_states, self.n_actions, self.n_states)
        return self.transitions

    def row(self, s, a):
        """Dense copy of ``T(.|s, a)``."""
        if self.is_sparse:
            return self.transitions[[s * self.n_actions + a]].toarray().ravel()
        return np.array(self.transitions[s, a])

    def to_dense(self):
        return TabularMdp(self.dense_transitions(), self.rewards, self.r_max)

    def to_sparse(self):
        return TabularMdp(sp.csr_array(self.stacked()), self.rewards, self.r_max)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Per-state action distribution ``pi[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _readonly(self.probs)
        if probs.ndim != 2:
            raise DimensionMismatch("policy must be 2-D (n_states, n_actions)", axis="policy")
        _check_rows(probs, "policy")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self):
        return self.probs.shape[0]

    @property
    def n_actions(self):
        return self.probs.shape[1]

    @property
    def deterministic_flag(self):
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def actions(self):
        """Most likely action per state (the action itself for deterministic policies)."""
        return np.argmax(self.probs, axis=1)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Row-stochastic kernel ``P[s, s']`` (dense array or sparse CSR)."""

    kernel: np.ndarray | sp.csr_array
    n_states: int = field(init=False)

    def __post_init__(self):
        if sp.issparse(self.kernel):
            kernel = sp.csr_array(self.kernel, dtype=float, copy=True)
            kernel.data.setflags(write=False)
        else:
            kernel = _readonly(self.kernel)
        if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
            raise DimensionMismatch(f"kernel must be square, got {kernel.shape}", axis="kernel")
        _check_rows(kernel, "kernel")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "n_states", kernel.shape[0])

    @property
    def is_sparse(self):
        return sp.issparse(self.kernel)

    def dense(self):
        if self.is_sparse:
            if self.n_states > MAX_DENSE_STATES:
                raise InvalidArgument(f"refusing to densify a {self.n_states}-state chain")
            return self.kernel.toarray()
        return self.kernel


@dataclass(frozen=True)
class StationaryDistribution:
    mu: np.ndarray
    residual: float


@dataclass(frozen=True)
class DifferentialValue:
    """Average reward ``rho`` and bias ``h`` normalised so that ``mu @ h == 0``."""

    rho: float
    bias: np.ndarray


def _check_policy(mdp, policy):
    if policy.n_states != mdp.n_states:
        raise DimensionMismatch(
            f"policy covers {policy.n_states} states, MDP has {mdp.n_states}", axis="state"
        )
    if policy.n_actions != mdp.n_actions:
        raise DimensionMismatch(
            f"policy covers {policy.n_actions} actions, MDP has {mdp.n_actions}", axis="action"
        )


def induce_chain(mdp: TabularMdp, policy: PolicyTable) -> MarkovChain:
    """``P[s, s'] = sum_a pi(a|s) T(s'|s, a)``."""
    _check_policy(mdp, policy)
    n, n_actions = mdp.n_states, mdp.n_actions
    if mdp.is_sparse:
        weights = sp.diags_array(policy.probs.ravel())
        pick = sp.csr_array(
            (np.ones(n * n_actions), (np.repeat(np.arange(n), n_actions), np.arange(n * n_actions))),
            shape=(n, n * n_actions),
        )
        return MarkovChain(sp.csr_array(pick @ (weights @ mdp.transitions)))
    return MarkovChain(np.einsum("sa,sat->st", policy.probs, mdp.transitions))


def policy_reward(mdp: TabularMdp, policy: PolicyTable) -> np.ndarray:
    """Expected one-step reward ``r_pi(s) = sum_a pi(a|s) R(s, a)``."""
    _check_policy(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.rewards)


def smooth_ergodic(mdp: TabularMdp, eps_smooth: float = DEFAULT_SMOOTHING) -> TabularMdp:
    """Add ``eps_smooth`` to every transition probability and renormalise.

    Every entry of the result is strictly positive, so every stationary policy
    induces an aperiodic unichain. Rewards are untouched.
    """
    if not eps_smooth > 0:
        raise InvalidArgument(f"eps_smooth must be positive, got {eps_smooth}", parameter="eps_smooth")
    trans = mdp.dense_transitions()
    smoothed = (trans + eps_smooth) / (1.0 + mdp.n_states * eps_smooth)
    return TabularMdp(smoothed, mdp.rewards, mdp.r_max)


def steady_state(chain: MarkovChain, tol: float = STEADY_STATE_TOL) -> StationaryDistribution:
    """Stationary distribution by a direct solve of the balance equations.

    One balance equation of ``(P^T - I) mu = 0`` is replaced by ``sum(mu) = 1``.
    A residual ``||mu P - mu||_inf`` above ``tol`` is an error, never a silent
    return.
    """
    n = chain.n_states
    if n == 1:
        return StationaryDistribution(np.ones(1), 0.0)
    P = chain.kernel
    b = np.zeros(n)
    b[-1] = 1.0
    if chain.is_sparse:
        A = sp.lil_array((P.T - sp.eye_array(n)).tocsr())
        A[n - 1, :] = np.ones(n)
        try:
            with np.errstate(all="ignore"):
                mu = spla.spsolve(A.tocsc(), b)
        except RuntimeError as exc:  # pragma: no cover - superlu reports singularity this way
            raise SolverError(f"singular balance system: {exc}") from exc
    else:
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        try:
            mu = np.linalg.solve(A, b)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular balance system (chain not unichain?)", condition=math.inf) from exc
    if not np.all(np.isfinite(mu)):
        raise SolverError("balance system produced non-finite values", condition=_condition(A))
    if mu.min() < -tol:
        raise SolverError(
            f"stationary solve returned negative mass {mu.min():.3e}", condition=_condition(A)
        )
    mu = np.clip(mu, 0.0, None)
    mu /= mu.sum()
    residual = float(np.abs(P.T @ mu - mu).max())
    if residual > tol:
        raise SolverError(
            f"stationary residual {residual:.3e} exceeds tolerance {tol:.1e}",
            condition=_condition(A),
            residual=residual,
        )
    return StationaryDistribution(mu, residual)


def _condition(A):
    try:
        if sp.issparse(A):
            if A.shape[0] > 2000:
                return None
            A = A.toarray()
        return float(np.linalg.cond(A))
    except Exception:  # the estimate is diagnostic only
        return None


def average_reward(mdp: TabularMdp, policy: PolicyTable) -> float:
    """``rho(pi) = sum_s mu(s) sum_a pi(a|s) R(s, a)``."""
    mu = steady_state(induce_chain(mdp, policy)).mu
    return float(mu @ policy_reward(mdp, policy))


def differential_value(mdp: TabularMdp, policy: PolicyTable, tol: float = BIAS_TOL) -> DifferentialValue:
    """Solve the Poisson equation ``h = r - rho + P h`` with ``mu @ h = 0``.

    Uses the fundamental-matrix form ``(I - P + 1 mu^T) h = r - rho``, which is
    nonsingular for a unichain kernel and yields the mu-normalised bias
    directly.
    """
    chain = induce_chain(mdp, policy)
    mu = steady_state(chain).mu
    r = policy_reward(mdp, policy)
    rho = float(mu @ r)
    n = mdp.n_states
    rhs = r - rho
    if chain.is_sparse:
        # the equation of a recurrent state is redundant; swap it for mu @ h = 0
        pivot = int(np.argmax(mu))
        A = sp.lil_array((sp.eye_array(n) - chain.kernel).tocsr())
        A[pivot, :] = mu
        b = rhs.copy()
        b[pivot] = 0.0
        try:
            with np.errstate(all="ignore"):
                h = spla.spsolve(A.tocsc(), b)
        except RuntimeError as exc:  # pragma: no cover
            raise SolverError(f"singular bias system: {exc}") from exc
    else:
        A = np.eye(n) - chain.kernel + np.outer(np.ones(n), mu)
        try:
            h = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular bias system") from exc
    if not np.all(np.isfinite(h)):
        raise SolverError("bias solve produced non-finite values")
    residual = np.abs(r - rho + chain.kernel @ h - h).max()
    if residual > tol * max(1.0, np.abs(h).max()):
        raise SolverError(f"bias residual {residual:.3e} exceeds tolerance", residual=float(residual))
    return DifferentialValue(rho, h)


def _q_backup(mdp, values):
    """``R(s, a) + sum_s' T(s'|s, a) values(s')`` as an ``(n, A)`` array."""
    return mdp.rewards + (mdp.stacked() @ values).reshape(mdp.n_states, mdp.n_actions)


def optimal_average_reward(
    mdp: TabularMdp,
    tol: float = 1e-9,
    max_iter: int = 10**6,
    ref_state: int = 0,
    aperiodicity: float = 0.5,
) -> tuple[float, PolicyTable]:
    """Optimal gain and a deterministic optimal policy by relative value iteration.

    Runs RVI on the aperiodicity-transformed MDP (``T' = (1-k) I + k T``,
    ``R' = k R``), which has the same optimal policies and gain ``k rho*``, so
    periodic optimal chains do not stall the span stopping rule. The returned
    gain is the exact average reward of the greedy policy.

    Raises
    ------
    ConvergenceError
        If the span seminorm of successive differences stays above ``tol``
        for ``max_iter`` sweeps; ``last_value`` holds the achieved span.
    """
    if not 0 < aperiodicity <= 1:
        raise InvalidArgument("aperiodicity must lie in (0, 1]", parameter="aperiodicity")
    k = aperiodicity
    w = np.zeros(mdp.n_states)
    span = math.inf
    for it in range(1, max_iter + 1):
        q = k * _q_backup(mdp, w) + (1.0 - k) * w[:, None]
        new = q.max(axis=1)
        diff = new - w
        span = diff.max() - diff.min()
        w = new - new[ref_state]
        if span < tol:
            break
    else:
        raise ConvergenceError(
            f"relative value iteration did not reach span {tol:.1e} in {max_iter} sweeps",
            last_value=float(span),
            iterations=max_iter,
        )
    q = _q_backup(mdp, w)
    # lowest index among numerically tied maximisers
    best = q.max(axis=1, keepdims=True)
    actions = np.argmax(q >= best - 1e-12 * max(1.0, np.abs(best).max()), axis=1)
    policy = PolicyTable.deterministic(actions, mdp.n_actions)
    return average_reward(mdp, policy), policy


# --- structured text serialisation -------------------------------------------------

FORMAT_TAG = "polymix-mdp"
FORMAT_VERSION = 1


def dumps_mdp(mdp: TabularMdp, comments=()) -> str:
    """Serialise to the line-oriented text format.

    Layout::

        polymix-mdp 1
        # optional comment lines
        states <n>
        actions <A>
        r_max <float>
        transitions <nnz>
        <s> <a> <s'> <p>      (row-major, nonzero entries only)
        rewards <n*A>
        <s> <a> <r>           (row-major)

    Floats are written with ``repr`` so a round trip is exact.
    """
    out = io.StringIO()
    out.write(f"{FORMAT_TAG} {FORMAT_VERSION}\n")
    for c in comments:
        out.write(f"# {c}\n")
    n, n_actions = mdp.n_states, mdp.n_actions
    out.write(f"states {n}\nactions {n_actions}\nr_max {mdp.r_max!r}\n")
    stacked = sp.csr_array(mdp.stacked())
    stacked.sort_indices()
    out.write(f"transitions {stacked.nnz}\n")
    for row in range(n * n_actions):
        s, a = divmod(row, n_actions)
        lo, hi = stacked.indptr[row], stacked.indptr[row + 1]
        for col, p in zip(stacked.indices[lo:hi], stacked.data[lo:hi]):
            out.write(f"{s} {a} {col} {float(p)!r}\n")
    out.write(f"rewards {n * n_actions}\n")
    for s in range(n):
        for a in range(n_actions):
            out.write(f"{s} {a} {float(mdp.rewards[s, a])!r}\n")
    return out.getvalue()


def loads_mdp(text: str, sparse: bool | None = None) -> TabularMdp:
    """Parse the text format written by :func:`dumps_mdp`.

    ``sparse=None`` picks dense storage for small state counts.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0].split()[0] != FORMAT_TAG:
        raise InvalidArgument("not a polymix-mdp file")
    version = int(lines[0].split()[1])
    if version != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported format version {version}")
    pos = 1

    def header(key):
        nonlocal pos
        parts = lines[pos].split()
        if parts[0] != key or len(parts) != 2:
            raise InvalidArgument(f"expected '{key} <value>' at record {pos}, got {lines[pos]!r}")
        pos += 1
        return parts[1]

    n = int(header("states"))
    n_actions = int(header("actions"))
    r_max = float(header("r_max"))
    nnz = int(header("transitions"))
    body = np.loadtxt(io.StringIO("\n".join(lines[pos:pos + nnz])), ndmin=2) if nnz else np.zeros((0, 4))
    pos += nnz
    if body.shape != (nnz, 4):
        raise InvalidArgument("malformed transition block")
    n_rewards = int(header("rewards"))
    if n_rewards != n * n_actions:
        raise DimensionMismatch("reward block length disagrees with shape header", axis="rewards")
    rbody = np.loadtxt(io.StringIO("\n".join(lines[pos:pos + n_rewards])), ndmin=2)
    if rbody.shape != (n_rewards, 3):
        raise InvalidArgument("malformed reward block")
    s, a, t = body[:, 0].astype(int), body[:, 1].astype(int), body[:, 2].astype(int)
    if nnz and (s.max() >= n or t.max() >= n or a.max() >= n_actions):
        raise DimensionMismatch("transition index out of range", axis="transitions")
    stacked = sp.csr_array((body[:, 3], (s * n_actions + a, t)), shape=(n * n_actions, n))
    rewards = np.zeros((n, n_actions))
    rewards[rbody[:, 0].astype(int), rbody[:, 1].astype(int)] = rbody[:, 2]
    if sparse is None:
        sparse = n > 500
    if sparse:
        return TabularMdp(stacked, rewards, r_max)
    return TabularMdp(stacked.toarray().reshape(n, n_actions, n), rewards, r_max)


def save_mdp(mdp: TabularMdp, path, comments=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_mdp(mdp, comments))


def load_mdp(path, sparse: bool | None = None) -> TabularMdp:
    with open(path, encoding="utf-8") as fh:
        return loads_mdp(fh.read(), sparse=sparse)


def random_mdp(n_states, n_actions, rng, sparsity=0.0, r_max=1.0) -> TabularMdp:
    """Random dense MDP for tests and examples (rows Dirichlet, optional zeroing)."""
    trans = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(trans.shape) < sparsity
        # keep at least one successor per row
        keep = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = False
        trans = np.where(mask, 0.0, trans)
        trans /= trans.sum(axis=2, keepdims=True)
    rewards = rng.random((n_states, n_actions)) * r_max
    return TabularMdp(trans, rewards, r_max)


def random_policy(n_states, n_actions, rng) -> PolicyTable:
    return PolicyTable(rng.dirichlet(np.ones(n_actions), size=n_states))
