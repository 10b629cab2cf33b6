"""Discounted tabular baselines: SARSA-style and max-target Q-learning, Dyna-Q, model-based n-step TD.

All act epsilon-greedily on ``Q`` with ties broken uniformly at random from the
agent's own generator. Q starts at zero.
"""

from __future__ import annotations

import numpy as np

from ..sim import Uniforms
from .base import Agent, AgentConfig, ModelEstimate


class QAgent(Agent):
    """One-step TD control.

    ``q_on`` bootstraps on the value of the action the behaviour policy takes
    next; ``q_off`` bootstraps on ``max_a Q(s', a)``.
    """

    def __init__(self, n_states, n_actions, config: AgentConfig):
        super().__init__(n_states, n_actions, config)
        self.q = np.zeros((n_states, n_actions))
        self.on_policy = config.algorithm == "q_on"
        self._pending = None

    def greedy(self, s):
        row = self.q[s]
        best = np.flatnonzero(row == row.max())
        return int(best[0]) if best.size == 1 else int(self.rng.choice(best))

    def act(self, s):
        if self.rng.random() < self.config.epsilon:
            a = int(self.rng.integers(self.n_actions))
        else:
            a = self.greedy(s)
        if self.on_policy and self._pending is not None:
            ps, pa, pr = self._pending
            self._td(ps, pa, pr + self.config.discount * self.q[s, a])
            self._pending = None
        return a

    def _td(self, s, a, target):
        self.q[s, a] += self.config.learning_rate * (target - self.q[s, a])

    def learn(self, s, a, r, s_next):
        if self.on_policy:
            # the target needs the next action, which act() draws
            self._pending = (s, a, r)
        else:
            self._td(s, a, r + self.config.discount * self.q[s_next].max())


class DynaQ(QAgent):
    """Max-target Q-learning plus ``planning_steps`` replayed model backups per real step.

    Each backup picks a previously visited ``(s, a)`` uniformly and a successor
    in proportion to its observed count. Planning draws from a separate
    generator, so ``planning_steps = 0`` gives exactly the ``q_off``
    trajectory for the same seed.
    """

    def __init__(self, n_states, n_actions, config: AgentConfig):
        super().__init__(n_states, n_actions, config.replace(algorithm="q_off"))
        self.config = config
        self.model = ModelEstimate(n_states, n_actions)
        self.plan_uniforms = Uniforms(np.random.default_rng([config.seed, 1]))
        self.seen = []
        # observed successors with multiplicity, so a uniform pick is count-weighted
        self.successors = {}

    def learn(self, s, a, r, s_next):
        super().learn(s, a, r, s_next)
        self.model.update(s, a, r, s_next)
        key = (s, a)
        if key not in self.successors:
            self.successors[key] = []
            self.seen.append(key)
        self.successors[key].append(s_next)
        gamma = self.config.discount
        alpha = self.config.learning_rate
        q = self.q
        u = self.plan_uniforms
        for _ in range(self.config.planning_steps):
            ps, pa = self.seen[int(u() * len(self.seen))]
            succ = self.successors[(ps, pa)]
            s2 = succ[int(u() * len(succ))]
            target = self.model.r_value(ps, pa) + gamma * q[s2].max()
            q[ps, pa] += alpha * (target - q[ps, pa])


class ModelNStepTD(QAgent):
    """Q-learning whose targets are n-step returns simulated in the learned model.

    After each real transition ``(s, a)`` the target is
    ``sum_k gamma^k r_k + gamma^n max_a Q(s_n, a)`` along a model rollout
    that starts with ``(s, a)`` and then follows the greedy policy. The rollout
    bootstraps early when it reaches an unvisited state-action pair.
    """

    def __init__(self, n_states, n_actions, config: AgentConfig):
        super().__init__(n_states, n_actions, config.replace(algorithm="q_off"))
        self.config = config
        self.model = ModelEstimate(n_states, n_actions)
        self.plan_uniforms = Uniforms(np.random.default_rng([config.seed, 1]))
        self.successors = {}

    def nstep_target(self, s, a):
        gamma = self.config.discount
        q = self.q
        u = self.plan_uniforms
        total, disc = 0.0, 1.0
        for _ in range(self.config.n):
            succ = self.successors.get((s, a))
            if succ is None:
                return total + disc * q[s, a]
            total += disc * self.model.r_value(s, a)
            disc *= gamma
            s = succ[0] if len(succ) == 1 else succ[int(u() * len(succ))]
            a = int(np.argmax(q[s]))
        return total + disc * q[s].max()

    def learn(self, s, a, r, s_next):
        self.model.update(s, a, r, s_next)
        self.successors.setdefault((s, a), []).append(s_next)
        self._td(s, a, self.nstep_target(s, a))
