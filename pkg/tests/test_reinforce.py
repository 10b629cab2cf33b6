import math

import numpy as np
import pytest

from polymix.agents.reinforce import (
    PolicyParams,
    ReinforceAgent,
    ReinforceConfig,
    clip_by_global_norm,
    evaluate_reward_rate,
    finite_difference_grad,
    forward,
    policy_entropy,
    run_reinforce,
    surrogate_grad,
)
from polymix.envs import one_hot_features, task_set
from polymix.errors import AgentFailure, InvalidArgument


def frozen_batch(seed=0, dim=3, T=7):
    rng = np.random.default_rng(seed)
    X = np.stack([one_hot_features(rng.integers(dim, size=3), rng.integers(dim, size=3), dim) for _ in range(T)])
    actions = rng.integers(6, size=T)
    rewards = rng.integers(2, size=T).astype(float)
    return X, actions, rewards


def relative_error(a, b):
    a = np.concatenate([g.ravel() for g in a])
    b = np.concatenate([g.ravel() for g in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b))


def test_gradient_matches_finite_differences():
    X, A, R = frozen_batch()
    params = PolicyParams.init((X.shape[1], 8, 8, 6), np.random.default_rng(1))
    analytic = surrogate_grad(params, X, A, R, 0.1)
    numeric = finite_difference_grad(params, X, A, R, 0.1)
    assert relative_error(analytic, numeric) < 1e-4


def test_probabilities_are_normalised():
    X, _, _ = frozen_batch()
    params = PolicyParams.init((X.shape[1], 5, 5, 6), np.random.default_rng(0))
    p, acts = forward(params, X)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert len(acts) == 4


def test_init_ranges():
    params = PolicyParams.init((60, 100, 100, 6), np.random.default_rng(0))
    for W, b in zip(params.weights, params.biases):
        assert np.abs(W).max() <= 1 / math.sqrt(W.shape[0])
        assert not b.any()


def test_clip_by_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_by_global_norm(grads, 1.0)
    assert norm == 5.0
    assert np.sqrt(sum(float(g @ g) for g in clipped)) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(grads, 10.0)
    assert same[0][0] == 3.0


def test_large_entropy_bonus_drives_policy_uniform():
    cfg = ReinforceConfig(hidden=(16, 16), entropy_coef=1e3, learning_rate=1e-3, seed=0)
    result = run_reinforce(dim=4, n_tasks=2, tau=50, steps=2000, seed=0, config=cfg, eval_steps=20)
    ent = policy_entropy(result.agent, 4, np.random.default_rng(0))
    assert ent >= 0.99 * math.log(6)


def test_non_finite_gradient_raises_with_step():
    agent = ReinforceAgent(18, 6, ReinforceConfig(hidden=(4, 4)))
    X, A, R = frozen_batch(dim=3)
    R = R.copy()
    R[0] = np.nan
    with pytest.raises(AgentFailure) as exc:
        agent.update(X, A, R)
    assert exc.value.step == 0


def test_config_validation():
    with pytest.raises(InvalidArgument):
        ReinforceConfig(learning_rate=0)
    with pytest.raises(InvalidArgument):
        run_reinforce(steps=0)


def test_single_task_learns_quickly():
    result = run_reinforce(dim=10, n_tasks=1, tau=100, steps=10_000, seed=0)
    assert result.final_reward_rate > 0.9


def test_evaluation_of_uniform_policy_is_about_half():
    cfg = ReinforceConfig(hidden=(4, 4))
    agent = ReinforceAgent(60, 6, cfg)
    for W in agent.params.weights:
        W[:] = 0.0
    tasks = task_set(10, 20, seed=0)
    rate = evaluate_reward_rate(agent, tasks, 10, steps=300, rng=np.random.default_rng(0))
    assert 0.4 < rate <= 0.55


def test_reproducible():
    a = run_reinforce(dim=4, n_tasks=2, tau=20, steps=300, seed=3, config=ReinforceConfig(hidden=(8, 8), seed=3))
    b = run_reinforce(dim=4, n_tasks=2, tau=20, steps=300, seed=3, config=ReinforceConfig(hidden=(8, 8), seed=3))
    np.testing.assert_array_equal(a.rewards, b.rewards)
    assert a.final_reward_rate == b.final_reward_rate
