"""Shared pieces for the tabular agents: configuration, learned model, interface."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import InvalidArgument
from ..mdp import DEFAULT_SMOOTHING

ALGORITHMS = (
    "rho_on",
    "rho_off",
    "q_on",
    "q_off",
    "dyna",
    "nstep_td",
)


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters for every tabular agent.

    Fields an algorithm does not use are ignored by it. ``discount`` applies to
    the Q-learning family only; ``batch_size`` to off-policy rho-learning.
    """

    algorithm: str = "rho_on"
    epsilon: float = 0.1
    learning_rate: float = 0.1
    batch_size: int = 1
    planning_steps: int = 10
    n: int = 3
    discount: float = 0.99
    update_model_always: bool = False
    reward_init: float = 1.0
    evaluator: str = "incremental"
    smoothing: float = DEFAULT_SMOOTHING
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"unknown algorithm {self.algorithm!r}", parameter="algorithm")
        if not 0 <= self.epsilon <= 1:
            raise InvalidArgument("epsilon must lie in [0, 1]", parameter="epsilon")
        if not 0 < self.learning_rate <= 1:
            raise InvalidArgument("learning_rate must lie in (0, 1]", parameter="learning_rate")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1", parameter="batch_size")
        if self.planning_steps < 0:
            raise InvalidArgument("planning_steps must be >= 0", parameter="planning_steps")
        if self.n < 1:
            raise InvalidArgument("n must be >= 1", parameter="n")
        if not 0 <= self.discount <= 1:
            raise InvalidArgument("discount must lie in [0, 1]", parameter="discount")
        if self.evaluator not in ("incremental", "direct"):
            raise InvalidArgument("evaluator must be 'incremental' or 'direct'", parameter="evaluator")
        if not self.smoothing > 0:
            raise InvalidArgument("smoothing must be positive", parameter="smoothing")

    def replace(self, **changes):
        return AgentConfig(**{**asdict(self), **changes})

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgument(f"unknown agent config keys {sorted(unknown)}", parameter=sorted(unknown)[0])
        return cls(**d)


class ModelEstimate:
    """Count-based estimate of ``T`` and ``R``.

    Unvisited ``(s, a)`` pairs have a uniform next-state row and reward
    ``reward_init``.
    """

    def __init__(self, n_states, n_actions, reward_init=0.0):
        self.n_states = n_states
        self.n_actions = n_actions
        self.reward_init = float(reward_init)
        self.transition_counts = np.zeros((n_states, n_actions, n_states), dtype=np.int64)
        self.reward_sums = np.zeros((n_states, n_actions))
        self.visit_counts = np.zeros((n_states, n_actions), dtype=np.int64)
        # derived tables, refreshed one (s, a) entry per update
        self._t = np.full((n_states, n_actions, n_states), 1.0 / n_states)
        self._r = np.full((n_states, n_actions), self.reward_init)

    def update(self, s, a, r, s_next):
        self.transition_counts[s, a, s_next] += 1
        self.reward_sums[s, a] += r
        self.visit_counts[s, a] += 1
        v = self.visit_counts[s, a]
        self._t[s, a] = self.transition_counts[s, a] / v
        self._r[s, a] = self.reward_sums[s, a] / v

    def t_row(self, s, a):
        return self._t[s, a]

    def r_value(self, s, a):
        return self._r[s, a]

    @property
    def t_hat(self):
        return self._t.copy()

    @property
    def r_hat(self):
        return self._r.copy()


def smooth_row(rows, eps):
    """``(T + eps) / (1 + n eps)`` along the last axis."""
    return (rows + eps) / (1.0 + rows.shape[-1] * eps)


class Agent:
    """Step-wise interface: ``begin(obs) -> action`` then ``step(obs, reward) -> action``.

    ``step`` receives the state reached and the reward earned by the action
    returned from the previous call.
    """

    def __init__(self, n_states, n_actions, config: AgentConfig):
        self.n_states = n_states
        self.n_actions = n_actions
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.s = None
        self.a = None

    def _check(self, obs):
        if not 0 <= obs < self.n_states:
            raise InvalidArgument(f"observation {obs} outside [0, {self.n_states})", parameter="obs")

    def begin(self, obs):
        self._check(obs)
        self.s = int(obs)
        self.a = self.act(self.s)
        return self.a

    def step(self, obs, reward):
        self._check(obs)
        obs = int(obs)
        self.learn(self.s, self.a, float(reward), obs)
        self.s = obs
        self.a = self.act(obs)
        return self.a

    def act(self, s):
        raise NotImplementedError

    def learn(self, s, a, r, s_next):
        raise NotImplementedError

    @property
    def rho_hat(self):
        return None
