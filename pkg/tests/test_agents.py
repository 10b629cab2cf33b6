import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from polymix.agents import AgentConfig, DynaQ, ModelNStepTD, QAgent, RhoLearner, make_agent
from polymix.agents.base import ModelEstimate, smooth_row
from polymix.agents.rho import PolicyChain, argmax_low, direct_candidate_rates
from polymix.envs import TabularSimulator
from polymix.errors import InvalidArgument
from polymix.harness import run_lifelong
from polymix.mdp import PolicyTable, TabularMdp, average_reward, random_mdp
from polymix.sim import Uniforms

from oracles import enumerate_gain


def drive(agent, mdp, steps, seed=0):
    """Run an agent on a tabular MDP; returns actions and rewards."""
    sim = TabularSimulator(mdp)
    rng = np.random.default_rng(seed)
    uni = Uniforms(rng)
    s = sim.reset(rng)
    a = agent.begin(s)
    actions, rewards = [], []
    for _ in range(steps):
        s, r = sim.step(s, a, uni())
        actions.append(a)
        rewards.append(r)
        a = agent.step(s, r)
    return np.array(actions), np.array(rewards)


def chooser_mdp():
    """Two states; action a moves to state a; reward 1 for being in state 1."""
    T = np.zeros((2, 2, 2))
    T[:, 0, 0] = 1.0
    T[:, 1, 1] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(T, R)


def bandit():
    return TabularMdp(np.ones((1, 2, 1)), np.array([[0.0, 1.0]]))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        AgentConfig("sarsa_lambda")
    with pytest.raises(InvalidArgument) as exc:
        AgentConfig("rho_off", batch_size=0)
    assert exc.value.parameter == "batch_size"
    with pytest.raises(InvalidArgument):
        AgentConfig(epsilon=1.5)
    cfg = AgentConfig("dyna", planning_steps=5)
    assert AgentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidArgument):
        AgentConfig.from_dict({"algorithm": "q_on", "gamma": 0.9})


@pytest.mark.parametrize("algorithm", ["rho_on", "rho_off", "q_on", "q_off", "dyna", "nstep_td"])
def test_single_action_always_zero(algorithm):
    mdp = TabularMdp(np.full((3, 1, 3), 1 / 3), np.zeros((3, 1)))
    actions, _ = drive(make_agent(3, 1, AgentConfig(algorithm)), mdp, 50)
    assert set(actions.tolist()) == {0}


@pytest.mark.parametrize("algorithm", ["rho_on", "rho_off", "q_on", "q_off", "dyna", "nstep_td"])
def test_full_exploration_is_uniform(algorithm):
    mdp = TabularMdp(np.full((2, 3, 2), 0.5), np.zeros((2, 3)))
    actions, _ = drive(make_agent(2, 3, AgentConfig(algorithm, epsilon=1.0)), mdp, 100_000)
    counts = np.bincount(actions, minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("algorithm", ["rho_on", "rho_off", "q_on", "q_off", "dyna", "nstep_td"])
def test_fixed_seed_replay(algorithm):
    rng = np.random.default_rng(0)
    mdp = random_mdp(5, 3, rng)
    cfg = AgentConfig(algorithm, seed=4)
    a1, r1 = drive(make_agent(5, 3, cfg), mdp, 500, seed=2)
    a2, r2 = drive(make_agent(5, 3, cfg), mdp, 500, seed=2)
    np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(r1, r2)


def test_observation_range_checked():
    agent = make_agent(3, 2, AgentConfig("q_off"))
    with pytest.raises(InvalidArgument):
        agent.begin(3)


@pytest.mark.parametrize("algorithm", ["rho_on", "rho_off"])
def test_rho_learning_finds_rewarding_state(algorithm):
    mdp = chooser_mdp()
    agent = make_agent(2, 2, AgentConfig(algorithm, epsilon=0.1))
    drive(agent, mdp, 2000)
    assert agent.policy.actions().tolist() == [1, 1]
    assert agent.rho_hat == pytest.approx(1.0, abs=1e-3)
    assert average_reward(mdp, agent.policy) == pytest.approx(1.0)


def test_single_action_policy_never_changes():
    mdp = TabularMdp(np.full((3, 1, 3), 1 / 3), np.ones((3, 1)))
    agent = RhoLearner(3, 1, AgentConfig("rho_on"))
    drive(agent, mdp, 100)
    np.testing.assert_array_equal(agent.probs, np.ones((3, 1)))


def test_model_estimate_counts():
    m = ModelEstimate(3, 2, reward_init=0.5)
    assert m.r_value(0, 0) == 0.5
    np.testing.assert_allclose(m.t_row(0, 0), [1 / 3] * 3)
    m.update(0, 1, 1.0, 2)
    m.update(0, 1, 0.0, 1)
    np.testing.assert_allclose(m.t_row(0, 1), [0, 0.5, 0.5])
    assert m.r_value(0, 1) == 0.5
    assert m.visit_counts[0, 1] == 2


def test_smooth_row_is_stochastic():
    rows = np.array([[1.0, 0.0, 0.0], [0.2, 0.3, 0.5]])
    out = smooth_row(rows, 1e-3)
    np.testing.assert_allclose(out.sum(axis=1), 1.0)
    assert out.min() > 0


def test_argmax_low_prefers_lowest_tied_index():
    assert argmax_low(np.array([0.1, 0.3, 0.3])) == 1
    assert argmax_low(np.array([0.3, 0.3 - 1e-14, 0.1])) == 0


@given(st.integers(2, 8), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_incremental_rates_match_direct_solve(n, A, seed):
    rng = np.random.default_rng(seed)
    T = smooth_row(rng.dirichlet(np.full(n, 0.5), size=(n, A)), 1e-6)
    R = rng.random((n, A))
    probs = rng.dirichlet(np.ones(A), size=n)
    chain = PolicyChain(T, R, probs)
    for _ in range(6):
        s = int(rng.integers(n))
        np.testing.assert_allclose(
            chain.candidate_rates(s, T[s], R[s]), direct_candidate_rates(T, R, probs, s), atol=1e-8
        )
        # commit a deterministic action and change a model row, as the agent does
        a = int(rng.integers(A))
        probs[s] = 0.0
        probs[s, a] = 1.0
        chain.update_row(s)
        s2 = int(rng.integers(n))
        T[s2, a] = smooth_row(rng.dirichlet(np.ones(n)), 1e-6)
        R[s2, a] = rng.random()
        chain.update_row(s2)


def test_direct_and_incremental_agents_agree():
    rng = np.random.default_rng(5)
    mdp = random_mdp(6, 3, rng)
    runs = []
    for evaluator in ("incremental", "direct"):
        agent = RhoLearner(6, 3, AgentConfig("rho_off", evaluator=evaluator, batch_size=2))
        runs.append(drive(agent, mdp, 300)[0])
    np.testing.assert_array_equal(*runs)


@given(st.integers(2, 6), st.integers(2, 3), st.integers(0, 2**32 - 1))
def test_improvement_never_lowers_model_rate(n, A, seed):
    rng = np.random.default_rng(seed)
    agent = RhoLearner(n, A, AgentConfig("rho_off"))
    mdp = random_mdp(n, A, rng)
    drive(agent, mdp, 30, seed=seed % 1000)
    for _ in range(10):
        before = agent.rho_hat
        agent.improve(int(rng.integers(n)))
        assert agent.rho_hat >= before - 1e-9


@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_improvement_sweeps_on_true_model_reach_optimum(n, A, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n, A, rng)
    agent = RhoLearner(n, A, AgentConfig("rho_off", batch_size=n))
    agent.T[:] = mdp.transitions
    agent.R[:] = mdp.rewards
    agent.chain.rebuild()
    for _ in range(100):
        before = agent.probs.copy()
        for s in range(n):
            agent.improve(s)
        if np.array_equal(before, agent.probs):
            break
    assert average_reward(mdp, agent.policy) == pytest.approx(enumerate_gain(mdp.transitions, mdp.rewards), abs=1e-8)


def test_q_bandit_picks_rewarding_arm():
    for alg in ("q_on", "q_off"):
        agent = QAgent(1, 2, AgentConfig(alg, epsilon=0.1))
        drive(agent, bandit(), 500)
        assert agent.greedy(0) == 1


def test_zero_discount_learns_immediate_reward():
    agent = QAgent(1, 2, AgentConfig("q_off", epsilon=1.0, learning_rate=0.5, discount=0.0))
    drive(agent, bandit(), 200)
    np.testing.assert_allclose(agent.q[0], [0.0, 1.0], atol=1e-6)


def test_dyna_without_planning_is_q_learning():
    rng = np.random.default_rng(1)
    mdp = random_mdp(5, 3, rng)
    a_q, r_q = drive(QAgent(5, 3, AgentConfig("q_off", seed=3)), mdp, 1000)
    dyna = DynaQ(5, 3, AgentConfig("dyna", planning_steps=0, seed=3))
    a_d, r_d = drive(dyna, mdp, 1000)
    np.testing.assert_array_equal(a_q, a_d)
    np.testing.assert_array_equal(r_q, r_d)


def test_dyna_replays_only_visited_pairs():
    T = np.zeros((3, 2, 3))
    T[:, 0, 1] = 1.0
    T[:, 1, 2] = 1.0
    mdp = TabularMdp(T, np.ones((3, 2)))
    agent = DynaQ(3, 2, AgentConfig("dyna", epsilon=0.0, planning_steps=20))
    drive(agent, mdp, 50)
    visited = set(zip(*np.nonzero(agent.model.visit_counts)))
    assert set(agent.seen) == visited
    touched = set(zip(*np.nonzero(agent.q)))
    assert touched <= visited


def corridor():
    """Three states in a line; action 0 moves right, the last state loops and pays 1."""
    T = np.zeros((3, 1, 3))
    T[0, 0, 1] = T[1, 0, 2] = T[2, 0, 2] = 1.0
    R = np.array([[0.0], [0.0], [1.0]])
    return TabularMdp(T, R)


def test_nstep_target_matches_hand_rollout():
    g = 0.9
    agent = ModelNStepTD(3, 1, AgentConfig("nstep_td", n=2, discount=g, learning_rate=1.0, epsilon=0.0))
    for s, s2 in ((0, 1), (1, 2), (2, 2)):
        agent.model.update(s, 0, float(s == 2), s2)
        agent.successors[(s, 0)] = [s2]
    agent.q[:] = [[0.5], [0.7], [2.0]]
    # from (0, 0): r=0 -> s=1, r=0 -> s=2, bootstrap max Q(2) = 2
    assert agent.nstep_target(0, 0) == pytest.approx(0 + g * 0 + g**2 * 2.0)
    # n = 1 is the one-step model backup
    agent.config = agent.config.replace(n=1)
    assert agent.nstep_target(1, 0) == pytest.approx(0 + g * 2.0)


def test_nstep_long_horizon_saturates_on_corridor():
    g = 0.5
    targets = []
    for n in (3, 30, 60):
        agent = ModelNStepTD(3, 1, AgentConfig("nstep_td", n=n, discount=g, learning_rate=1.0, epsilon=0.0))
        for s, s2 in ((0, 1), (1, 2), (2, 2)):
            agent.model.update(s, 0, float(s == 2), s2)
            agent.successors[(s, 0)] = [s2]
        targets.append(agent.nstep_target(0, 0))
    # beyond the corridor length only the discounted tail remains; it vanishes geometrically
    assert targets[1] == pytest.approx(targets[2], abs=1e-8)
    assert targets[1] == pytest.approx(g**2 / (1 - g), abs=1e-8)


def test_lifelong_regret_on_constant_reward_is_zero():
    from polymix.envs import make_goal_grid

    env = make_goal_grid(3, seed=0)
    T = env.mdp.transitions
    const = TabularMdp(T, np.ones((9, 4)))
    from dataclasses import replace

    env_c = replace(env, mdp=const, _cache={})
    trace = run_lifelong(env_c, AgentConfig("q_off"), 200, seed=0)
    assert trace.regret_per_step == pytest.approx(0.0, abs=1e-12)
