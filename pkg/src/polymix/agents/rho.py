"""rho-learning: policy improvement by exact steady-state evaluation on a learned model.

For a state ``s`` the agent scores every action ``a`` by the reward rate of
``pi_m(s, a, pi)``, the current policy with ``a`` forced at ``s``, under the
smoothed model estimate, then commits the best one (lowest index on ties).

Two evaluators give the same scores:

``direct``
    Builds each modified chain and solves its balance equations.
``incremental``
    Keeps ``G = (I - P + 1 w^T)^{-1}`` for the current policy chain, with ``w``
    uniform. From it ``mu = w^T G``, ``y = G r`` solves the Poisson equation
    up to a constant, and mean hitting times to ``s`` are
    ``(G[s, s] - G[x, s]) / mu(s)``. Replacing row ``s`` by ``T_a`` then gives
    ``rho_a = rho + (R_a + T_a y - y(s) - rho) / (1 + T_a m_s)``, where the
    denominator is the new mean return time to ``s``. A change of one chain
    row is a rank-one update of ``G``.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument, SolverError
from ..mdp import MarkovChain, PolicyTable, steady_state
from .base import Agent, AgentConfig, ModelEstimate, smooth_row

# full re-inversion after this many rank-one updates (at least n)
REFRESH_UPDATES = 200
TIE_TOL = 1e-10


class PolicyChain:
    """Chain and reward vector of a policy on the smoothed model, with cached inverse.

    ``T`` is the ``(n, A, n)`` smoothed transition table and ``R`` the
    ``(n, A)`` reward table; both are read live, so callers mutate them in
    place and then call :meth:`update_row`.
    """

    def __init__(self, T, R, probs):
        self.T = T
        self.R = R
        self.probs = probs
        n = T.shape[0]
        self.n = n
        self.w = np.full(n, 1.0 / n)
        self.refresh_every = max(REFRESH_UPDATES, n)
        self.rebuild()

    def chain_row(self, s):
        return self.probs[s] @ self.T[s], float(self.probs[s] @ self.R[s])

    def rebuild(self):
        n = self.n
        self.P = np.einsum("sa,sat->st", self.probs, self.T)
        self.r = np.einsum("sa,sa->s", self.probs, self.R)
        M = np.eye(n) - self.P + np.outer(np.ones(n), self.w)
        try:
            self.G = np.linalg.inv(M)
        except np.linalg.LinAlgError as exc:
            raise SolverError("policy chain on the model is not unichain") from exc
        self.updates = 0
        self._mu = None
        self._y = None

    def update_row(self, s):
        """Refresh row ``s`` after a policy or model change at ``s``."""
        row, r = self.chain_row(s)
        delta = row - self.P[s]
        self.r[s] = r
        self._y = None
        if not delta.any():
            return
        self.updates += 1
        if self.updates >= self.refresh_every:
            self.rebuild()
            return
        # M' = M - e_s delta^T
        G = self.G
        dG = delta @ G
        denom = 1.0 - dG[s]
        if abs(denom) < 1e-12:
            self.rebuild()
            return
        G += np.outer(G[:, s], dG / denom)
        self.P[s] = row
        self._mu = None

    @property
    def mu(self):
        if self._mu is None:
            self._mu = self.w @ self.G
        return self._mu

    @property
    def y(self):
        if self._y is None:
            self._y = self.G @ self.r
        return self._y

    @property
    def rho(self):
        return float(self.mu @ self.r)

    def candidate_rates(self, s, T_rows, R):
        """``rho(pi_m(s, a))`` for each row of ``T_rows`` / entry of ``R``."""
        mu_s = self.mu[s]
        if not mu_s > 0:
            raise SolverError(f"model steady state has mu({s}) = {mu_s}")
        col = self.G[:, s]
        m = (col[s] - col) / mu_s
        m[s] = 0.0
        rho = self.rho
        y = self.y
        adv = R + T_rows @ y - y[s] - rho
        return rho + adv / (1.0 + T_rows @ m)


def direct_candidate_rates(T, R, probs, s):
    """Literal evaluation: one steady-state solve per action forced at ``s``."""
    P = np.einsum("sa,sat->st", probs, T)
    r = np.einsum("sa,sa->s", probs, R)
    out = np.empty(T.shape[1])
    for a in range(T.shape[1]):
        P[s] = T[s, a]
        r[s] = R[s, a]
        mu = steady_state(MarkovChain(P.copy())).mu
        out[a] = mu @ r
    return out


def argmax_low(values, tol=TIE_TOL):
    """Lowest index among the numerically tied maximisers."""
    best = values.max()
    return int(np.flatnonzero(values >= best - tol * max(1.0, abs(best)))[0])


class RhoLearner(Agent):
    """On-policy (``rho_on``) or off-policy (``rho_off``) rho-learning."""

    def __init__(self, n_states, n_actions, config: AgentConfig):
        if config.algorithm not in ("rho_on", "rho_off"):
            raise InvalidArgument("RhoLearner needs algorithm 'rho_on' or 'rho_off'", parameter="algorithm")
        super().__init__(n_states, n_actions, config)
        self.off_policy = config.algorithm == "rho_off"
        self.model = ModelEstimate(n_states, n_actions, config.reward_init)
        self.probs = np.full((n_states, n_actions), 1.0 / n_actions)
        # smoothed model, kept in step with self.model
        self.T = smooth_row(self.model.t_hat, config.smoothing)
        self.R = self.model.r_hat
        self.chain = PolicyChain(self.T, self.R, self.probs) if config.evaluator == "incremental" else None
        self.explored = False

    @property
    def policy(self):
        return PolicyTable(self.probs.copy())

    @property
    def rho_hat(self):
        if self.chain is not None:
            return self.chain.rho
        return None

    def candidate_rates(self, s):
        if self.chain is None:
            return direct_candidate_rates(self.T, self.R, self.probs, s)
        values = self.chain.candidate_rates(s, self.T[s], self.R[s])
        if not np.all(np.isfinite(values)):
            self.chain.rebuild()
            values = self.chain.candidate_rates(s, self.T[s], self.R[s])
        return values

    def observe(self, s, a, r, s_next):
        """Record a transition in the model and refresh the cached chain."""
        self.model.update(s, a, r, s_next)
        self.T[s, a] = smooth_row(self.model.t_row(s, a), self.config.smoothing)
        self.R[s, a] = self.model.r_value(s, a)
        if self.chain is not None and self.probs[s, a] > 0:
            self.chain.update_row(s)

    def improve(self, s):
        """Commit ``pi <- pi_m(s, argmax_a rho_hat)``; returns the chosen action."""
        a = argmax_low(self.candidate_rates(s))
        if self.probs[s, a] != 1.0:
            self.probs[s] = 0.0
            self.probs[s, a] = 1.0
            if self.chain is not None:
                self.chain.update_row(s)
        return a

    def act(self, s):
        explore = self.rng.random() < self.config.epsilon
        self.explored = explore
        if explore:
            return int(self.rng.integers(self.n_actions))
        if self.off_policy:
            row = self.probs[s]
            if row.max() == 1.0:
                return int(np.argmax(row))
            return int(self.rng.choice(self.n_actions, p=row))
        return self.improve(s)

    def learn(self, s, a, r, s_next):
        if self.off_policy or self.explored or self.config.update_model_always:
            self.observe(s, a, r, s_next)
        if self.off_policy:
            for _ in range(self.config.batch_size):
                self.improve(int(self.rng.integers(self.n_states)))
