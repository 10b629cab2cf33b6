"""Episodic REINFORCE with a two-hidden-layer ReLU network, in plain numpy.

With discount 0 the return credited to each action is its own reward, so the
surrogate maximised per episode is

    J = sum_t [ r_t log pi(a_t | x_t) + beta H(pi(. | x_t)) ]

and the update is ``theta += lr * clip(grad J)`` with global-norm clipping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..envs import TaskGridWorld, one_hot_features, task_set
from ..errors import AgentFailure, InvalidArgument


@dataclass
class ReinforceConfig:
    hidden: tuple = (100, 100)
    learning_rate: float = 0.1
    entropy_coef: float = 0.1
    clip_norm: float = 10.0
    max_episode_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be positive", parameter="learning_rate")
        if self.entropy_coef < 0:
            raise InvalidArgument("entropy_coef must be nonnegative", parameter="entropy_coef")
        if self.clip_norm <= 0:
            raise InvalidArgument("clip_norm must be positive", parameter="clip_norm")
        if self.max_episode_steps < 1:
            raise InvalidArgument("max_episode_steps must be >= 1", parameter="max_episode_steps")


@dataclass
class PolicyParams:
    """Weights and biases of the policy network, input to output."""

    sizes: tuple
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def init(cls, sizes, rng, dtype=np.float64):
        """``U(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(tuple(sizes), weights, biases)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.arrays()])

    def arrays(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self):
        return PolicyParams(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases])


def forward(params: PolicyParams, X):
    """Action probabilities for a batch of inputs, plus the activations for backprop."""
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    z = acts[-1]
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, acts


def surrogate(params: PolicyParams, X, actions, rewards, entropy_coef):
    """Per-episode objective ``sum_t r_t log pi(a_t|x_t) + beta H_t``."""
    probs, _ = forward(params, X)
    logp = np.log(probs)
    idx = np.arange(len(actions))
    entropy = -(probs * logp).sum(axis=1)
    return float(np.sum(rewards * logp[idx, actions] + entropy_coef * entropy))


def surrogate_grad(params: PolicyParams, X, actions, rewards, entropy_coef):
    """Analytic gradient of :func:`surrogate` as ``[dW0, db0, dW1, ...]``."""
    probs, acts = forward(params, X)
    logp = np.log(probs)
    n = len(actions)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    entropy = -(probs * logp).sum(axis=1, keepdims=True)
    # d log pi(a)/dz = onehot - p ;  dH/dz = -p (log p + H)
    delta = rewards[:, None] * (onehot - probs) - entropy_coef * probs * (logp + entropy)
    grads = []
    for i in range(len(params.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return grads[::-1]


def clip_by_global_norm(grads, max_norm):
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads, norm


def finite_difference_grad(params: PolicyParams, X, actions, rewards, entropy_coef, h=1e-6):
    """Central differences of :func:`surrogate` over every parameter (slow; for checks)."""
    out = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            up = surrogate(params, X, actions, rewards, entropy_coef)
            arr[i] = old - h
            down = surrogate(params, X, actions, rewards, entropy_coef)
            arr[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


class ReinforceAgent:
    """Softmax policy network trained by episodic REINFORCE with discount 0."""

    def __init__(self, n_inputs, n_actions, config: ReinforceConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.params = PolicyParams.init((n_inputs, *config.hidden, n_actions), self.rng)
        self.n_actions = n_actions
        self.last_grad_norm = 0.0
        self.updates = 0

    def probs(self, X):
        return forward(self.params, np.atleast_2d(X))[0]

    def act(self, x):
        p = self.probs(x)[0]
        return int(min(np.searchsorted(np.cumsum(p), self.rng.random(), side="right"), self.n_actions - 1))

    def update(self, X, actions, rewards):
        grads = surrogate_grad(self.params, X, actions, rewards, self.config.entropy_coef)
        grads, norm = clip_by_global_norm(grads, self.config.clip_norm)
        if not np.isfinite(norm):
            raise AgentFailure("non-finite policy gradient", step=self.updates)
        for p, g in zip(self.params.arrays(), grads):
            p += self.config.learning_rate * g
        self.last_grad_norm = min(norm, self.config.clip_norm)
        self.updates += 1


@dataclass
class ReinforceResult:
    rewards: np.ndarray
    final_reward_rate: float
    agent: ReinforceAgent
    params: dict

    @property
    def training_reward_rate(self):
        return float(np.mean(self.rewards))


def evaluate_reward_rate(agent: ReinforceAgent, tasks, dim, steps=200, rng=None, max_tasks=100):
    """Reward rate of the stochastic policy from the corner, averaged over tasks.

    Every task (or a seeded subset of ``max_tasks``) is rolled out in parallel
    for ``steps`` steps with its goal held fixed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    tasks = np.asarray(tasks)
    if len(tasks) > max_tasks:
        tasks = tasks[rng.choice(len(tasks), size=max_tasks, replace=False)]
    K = len(tasks)
    pos = np.zeros((K, 3), dtype=np.int64)
    moves = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    goal_code = np.zeros((K, 3 * dim))
    for k in range(3):
        goal_code[np.arange(K), k * dim + tasks[:, k]] = 1.0
    total = 0.0
    for _ in range(steps):
        X = np.zeros((K, 6 * dim))
        for k in range(3):
            X[np.arange(K), k * dim + pos[:, k]] = 1.0
        X[:, 3 * dim :] = goal_code
        p = agent.probs(X)
        a = (p.cumsum(axis=1) < rng.random((K, 1))).sum(axis=1).clip(max=5)
        new = np.clip(pos + moves[a], 0, dim - 1)
        closer = np.abs(new - tasks).sum(axis=1) < np.abs(pos - tasks).sum(axis=1)
        total += closer.sum()
        arrived = (new == tasks).all(axis=1)
        new[arrived] = 0
        pos = new
    return total / (K * steps)


def run_reinforce(
    dim: int = 10,
    n_tasks: int = 1,
    tau: int = 100,
    steps: int = 10_000,
    seed: int = 0,
    config: ReinforceConfig | None = None,
    eval_steps: int = 200,
    env_seed: int | None = None,
) -> ReinforceResult:
    """Train on the task grid for ``steps`` steps and evaluate the final policy.

    ``env_seed`` fixes the task set (default ``seed``); ``seed`` also drives
    the task progression and the agent.
    """
    if steps < 1:
        raise InvalidArgument("steps must be >= 1", parameter="steps")
    config = ReinforceConfig(seed=seed) if config is None else config
    tasks = task_set(dim, n_tasks, seed if env_seed is None else env_seed)
    world = TaskGridWorld(dim, tasks, tau, np.random.default_rng([seed, 3]))
    agent = ReinforceAgent(6 * dim, 6, config)
    rewards = np.empty(steps)
    X, A, R = [], [], []
    for t in range(steps):
        x = world.observe()
        a = agent.act(x)
        r, done = world.step(a)
        rewards[t] = r
        X.append(x)
        A.append(a)
        R.append(r)
        if done or len(A) >= config.max_episode_steps or t == steps - 1:
            try:
                agent.update(np.array(X), np.array(A), np.array(R))
            except AgentFailure as exc:
                raise AgentFailure(f"REINFORCE update failed at step {t}", step=t) from exc
            X, A, R = [], [], []
    rate = evaluate_reward_rate(agent, tasks, dim, eval_steps, np.random.default_rng([seed, 5]))
    params = {"dim": dim, "n_tasks": n_tasks, "tau": tau, "steps": steps, "seed": seed}
    return ReinforceResult(rewards, float(rate), agent, params)


def policy_entropy(agent: ReinforceAgent, dim, rng, n=256):
    """Mean action entropy over random (position, goal) inputs."""
    X = np.stack([one_hot_features(rng.integers(dim, size=3), rng.integers(dim, size=3), dim) for _ in range(n)])
    p = agent.probs(X)
    return float(-(p * np.log(p)).sum(axis=1).mean())
