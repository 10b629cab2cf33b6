import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from polymix.errors import ConvergenceError, DimensionMismatch, InvalidArgument, SolverError
from polymix.mdp import (
    MarkovChain,
    PolicyTable,
    TabularMdp,
    average_reward,
    differential_value,
    dumps_mdp,
    induce_chain,
    loads_mdp,
    optimal_average_reward,
    policy_reward,
    random_mdp,
    random_policy,
    smooth_ergodic,
    steady_state,
)

from oracles import enumerate_gain, power_iteration


def two_state(p=0.25):
    T = np.array([[[1 - p, p]], [[p, 1 - p]]])
    R = np.array([[1.0], [0.0]])
    return TabularMdp(T, R)


def test_rejects_non_stochastic_rows():
    T = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
    with pytest.raises(InvalidArgument):
        TabularMdp(T, np.zeros((2, 1)))


def test_rejects_negative_reward():
    T = np.ones((1, 1, 1))
    with pytest.raises(InvalidArgument):
        TabularMdp(T, -np.ones((1, 1)))


def test_shape_mismatch_names_axis():
    with pytest.raises(DimensionMismatch) as exc:
        TabularMdp(np.full((2, 1, 3), 1 / 3), np.zeros((2, 1)))
    assert exc.value.axis == "next_state"


def test_arrays_are_read_only():
    mdp = two_state()
    with pytest.raises(ValueError):
        mdp.rewards[0, 0] = 5.0


def test_two_state_stationary_is_uniform():
    mu = steady_state(induce_chain(two_state(), PolicyTable.uniform(2, 1))).mu
    np.testing.assert_allclose(mu, [0.5, 0.5], atol=1e-12)


def test_average_reward_two_state():
    assert average_reward(two_state(), PolicyTable.uniform(2, 1)) == pytest.approx(0.5, abs=1e-12)


def test_steady_state_reducible_chain_is_an_error():
    chain = MarkovChain(np.eye(3))
    with pytest.raises(SolverError):
        steady_state(chain)


def test_single_state_chain():
    assert steady_state(MarkovChain(np.ones((1, 1)))).mu.tolist() == [1.0]


@given(st.integers(2, 12), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_steady_state_matches_power_iteration(n, A, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n, A, rng)
    chain = induce_chain(mdp, random_policy(n, A, rng))
    mu = steady_state(chain).mu
    np.testing.assert_allclose(mu, power_iteration(chain.dense()), atol=1e-8)


@given(st.integers(2, 10), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_sparse_and_dense_agree(n, A, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n, A, rng, sparsity=0.5)
    pi = random_policy(n, A, rng)
    smooth = smooth_ergodic(mdp)
    dense = steady_state(induce_chain(smooth, pi)).mu
    sparse = steady_state(induce_chain(smooth.to_sparse(), pi)).mu
    np.testing.assert_allclose(dense, sparse, atol=1e-9)
    h_dense = differential_value(smooth, pi).bias
    h_sparse = differential_value(smooth.to_sparse(), pi).bias
    np.testing.assert_allclose(h_dense, h_sparse, atol=1e-7)


@given(st.integers(2, 10), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_bias_solves_poisson_equation(n, A, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n, A, rng)
    pi = random_policy(n, A, rng)
    dv = differential_value(mdp, pi)
    P = induce_chain(mdp, pi).dense()
    r = policy_reward(mdp, pi)
    np.testing.assert_allclose(dv.bias, r - dv.rho + P @ dv.bias, atol=1e-9)
    mu = power_iteration(P)
    assert abs(mu @ dv.bias) < 1e-9
    assert dv.rho == pytest.approx(mu @ r, abs=1e-10)


def test_bias_matches_cesaro_sum():
    # h = lim (1/H) sum_{k<H} sum_{t<k} P^t (r - rho) for an aperiodic chain is sum_t P^t (r - rho)
    rng = np.random.default_rng(3)
    mdp = random_mdp(5, 2, rng)
    pi = random_policy(5, 2, rng)
    P = induce_chain(mdp, pi).dense()
    r = policy_reward(mdp, pi)
    mu = power_iteration(P)
    g = r - mu @ r
    h = np.zeros(5)
    v = g.copy()
    for _ in range(2000):
        h += v
        v = P @ v
    np.testing.assert_allclose(differential_value(mdp, pi).bias, h, atol=1e-9)


@given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_optimal_gain_matches_enumeration(n, A, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n, A, rng)
    rho, policy = optimal_average_reward(mdp)
    assert policy.deterministic_flag
    assert rho == pytest.approx(enumerate_gain(mdp.transitions, mdp.rewards), abs=1e-7)


def test_optimal_gain_on_periodic_mdp():
    # deterministic 2-cycle: RVI without the aperiodicity transform would oscillate
    T = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    R = np.array([[1.0], [0.0]])
    rho, _ = optimal_average_reward(TabularMdp(T, R))
    assert rho == pytest.approx(0.5, abs=1e-9)


def test_optimal_gain_budget_exhaustion_reports_span():
    rng = np.random.default_rng(0)
    with pytest.raises(ConvergenceError) as exc:
        optimal_average_reward(random_mdp(6, 2, rng), tol=1e-15, max_iter=3)
    assert exc.value.iterations == 3
    assert exc.value.last_value > 0


def test_smoothing_keeps_rewards_and_makes_positive():
    T = np.zeros((3, 2, 3))
    T[:, :, 0] = 1.0
    mdp = TabularMdp(T, np.ones((3, 2)))
    sm = smooth_ergodic(mdp, 1e-3)
    assert sm.transitions.min() > 0
    np.testing.assert_array_equal(sm.rewards, mdp.rewards)
    with pytest.raises(InvalidArgument):
        smooth_ergodic(mdp, 0.0)


def test_policy_shape_checked():
    with pytest.raises(DimensionMismatch):
        induce_chain(two_state(), PolicyTable.uniform(3, 1))


def test_deterministic_policy_helpers():
    pi = PolicyTable.deterministic([1, 0, 2], 3)
    assert pi.deterministic_flag
    assert pi.actions().tolist() == [1, 0, 2]
    assert not PolicyTable.uniform(2, 2).deterministic_flag


@given(st.integers(1, 8), st.integers(1, 3), st.floats(0.0, 0.8), st.integers(0, 2**32 - 1))
def test_serialisation_round_trip_is_exact(n, A, sparsity, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n, A, rng, sparsity=sparsity)
    text = dumps_mdp(mdp, ["a comment"])
    back = loads_mdp(text)
    np.testing.assert_array_equal(back.dense_transitions(), mdp.dense_transitions())
    np.testing.assert_array_equal(back.rewards, mdp.rewards)
    assert back.r_max == mdp.r_max
    assert dumps_mdp(back, ["a comment"]) == text
    assert loads_mdp(text, sparse=True).is_sparse


def test_loads_rejects_bad_header():
    with pytest.raises(InvalidArgument):
        loads_mdp("something else 1\n")
    with pytest.raises(InvalidArgument):
        loads_mdp("polymix-mdp 9\nstates 1\n")


def test_sparse_mdp_accepts_csr():
    stacked = sp.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]]))
    mdp = TabularMdp(stacked, np.array([[1.0], [0.0]]))
    assert mdp.is_sparse
    np.testing.assert_array_equal(mdp.row(0, 0), [0.0, 1.0])
