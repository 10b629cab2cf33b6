import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polymix.analysis import (
    bottleneck_ratio,
    cesaro_mixing_time,
    conductance_bruteforce,
    exact_mixing_time,
    expected_hitting_times,
    graph_diameter,
    min_diameter,
    policy_diameter,
    reservoir_indices,
    residence_time_simulated,
    return_mixing_time_empirical,
    return_mixing_time_exact,
    sojourn_lengths,
    spectral_gap,
    total_variation,
)
from polymix.envs import TabularSimulator, make_rooms
from polymix.errors import ConvergenceError, DegenerateRegion, InvalidArgument, SolverError
from polymix.mdp import MarkovChain, PolicyTable, TabularMdp, induce_chain, random_mdp, random_policy, steady_state

from oracles import (
    brute_force_mixing,
    hitting_times_first_step,
    power_iteration,
    random_lazy_chain,
    random_smoothed_chain,
    return_mixing_bruteforce,
)

SYM = np.array([[0.75, 0.25], [0.25, 0.75]])
CYCLE2 = np.array([[0.0, 1.0], [1.0, 0.0]])


def chain_mdp(P, r):
    n = P.shape[0]
    return TabularMdp(P[:, None, :], np.asarray(r, dtype=float)[:, None])


def test_total_variation_basics():
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0


def test_two_state_mixing_time():
    # TV after h steps is 0.5^(h+1)
    assert exact_mixing_time(MarkovChain(SYM), 0.25) == 1
    assert exact_mixing_time(MarkovChain(SYM), 0.125) == 2


def test_two_state_cesaro_time():
    # Cesaro TV = (1 - 0.5^h) / h for the symmetric chain
    h = cesaro_mixing_time(MarkovChain(SYM), 0.25)
    tv = lambda k: (1 - 0.5**k) / k
    assert tv(h) <= 0.25 < tv(h - 1)


def test_periodic_chain_does_not_mix():
    with pytest.raises(ConvergenceError) as exc:
        exact_mixing_time(MarkovChain(CYCLE2), 0.25, horizon_cap=50)
    assert exc.value.last_value == pytest.approx(0.5)
    assert cesaro_mixing_time(MarkovChain(CYCLE2), 0.25) == 2


def test_eps_domain():
    with pytest.raises(InvalidArgument):
        exact_mixing_time(MarkovChain(SYM), 0.0)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.1, 0.25, 0.4]))
def test_mixing_time_matches_matrix_powers(n, seed, eps):
    P = random_smoothed_chain(n, np.random.default_rng(seed))
    mu = power_iteration(P)
    assert exact_mixing_time(MarkovChain(P), eps) == brute_force_mixing(P, mu, eps)


@given(st.integers(3, 8), st.integers(0, 2**32 - 1))
def test_hitting_times_match_first_step_iteration(n, seed):
    P = random_smoothed_chain(n, np.random.default_rng(seed), smoothing=0.05)
    H = expected_hitting_times(MarkovChain(P))
    for target in range(n):
        np.testing.assert_allclose(H[:, target], hitting_times_first_step(P, target), rtol=1e-7)


def test_hitting_time_unreachable_is_an_error():
    P = np.array([[1.0, 0.0], [0.5, 0.5]])
    with pytest.raises(SolverError):
        expected_hitting_times(MarkovChain(P))


def test_diameters_of_deterministic_cycle():
    P = np.roll(np.eye(4), 1, axis=1)
    rep = policy_diameter(MarkovChain(P))
    assert rep.policy_diameter == 3
    assert rep.graph_diameter == 2
    assert graph_diameter(MarkovChain(P)) == 2


def test_min_diameter_on_line():
    # 4-state line with left/right moves: D* is the line length
    n = 4
    T = np.zeros((n, 2, n))
    for s in range(n):
        T[s, 0, max(s - 1, 0)] = 1
        T[s, 1, min(s + 1, n - 1)] = 1
    assert min_diameter(TabularMdp(T, np.zeros((n, 2)))) == pytest.approx(3.0)


def test_min_diameter_bounded_by_any_policy_diameter():
    rng = np.random.default_rng(1)
    for _ in range(5):
        mdp = random_mdp(6, 3, rng, sparsity=0.5)
        d_star = min_diameter(mdp)
        for _ in range(4):
            pi = PolicyTable.deterministic(rng.integers(3, size=6), 3)
            try:
                d_pi = policy_diameter(induce_chain(mdp, pi)).policy_diameter
            except SolverError:
                continue
            assert d_star <= d_pi + 1e-6


def test_min_diameter_unreachable():
    T = np.zeros((2, 1, 2))
    T[:, 0, 0] = 1.0
    mdp = TabularMdp(T, np.zeros((2, 1)))
    with pytest.raises(SolverError):
        min_diameter(mdp)
    assert min_diameter(mdp, skip_unreachable=True) == 1.0


def test_return_mixing_alternator():
    # deterministic 2-cycle paying 1 in one state: rho = 1/2, |avg - 1/2| = 1/(2h) for odd h
    rep = return_mixing_time_exact(chain_mdp(CYCLE2, [1, 0]), PolicyTable.uniform(2, 1), 0.25, horizon_cap=100)
    assert rep.rho_estimate == pytest.approx(0.5)
    np.testing.assert_array_equal(rep.per_state_tret[:, 0], [2, 2])


def test_return_mixing_relative_grid():
    rep = return_mixing_time_exact(chain_mdp(SYM, [1, 0]), PolicyTable.uniform(2, 1), [0.1, 0.5], relative=True)
    np.testing.assert_allclose(rep.epsilon_grid, [0.05, 0.25])
    assert rep.mean_tret[0] >= rep.mean_tret[1]


@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.sampled_from([0.02, 0.05, 0.1]))
def test_return_mixing_matches_bruteforce(n, seed, eps):
    rng = np.random.default_rng(seed)
    P = random_smoothed_chain(n, rng, smoothing=0.02)
    r = rng.random(n)
    rep = return_mixing_time_exact(chain_mdp(P, r), PolicyTable.uniform(n, 1), eps, horizon_cap=400)
    np.testing.assert_array_equal(rep.per_state_tret[:, 0], return_mixing_bruteforce(P, r, eps, 400))


def test_return_mixing_cap_violation_raises():
    with pytest.raises(ConvergenceError):
        return_mixing_time_exact(chain_mdp(SYM, [1, 0]), PolicyTable.uniform(2, 1), 1e-6, horizon_cap=5)


def test_reservoir_is_uniform():
    rng = np.random.default_rng(0)
    counts = np.zeros(20)
    trials = 4000
    for _ in range(trials):
        idx = reservoir_indices(20, 5, rng)
        assert len(set(idx.tolist())) == 5
        counts[idx - 1] += 1
    expected = trials * 5 / 20
    assert np.abs(counts - expected).max() < 4 * math.sqrt(expected)


def test_reservoir_short_stream():
    assert reservoir_indices(3, 10, np.random.default_rng(0)).tolist() == [1, 2, 3]


def test_empirical_return_mixing_deterministic_rooms():
    # on a deterministic chain the sampled running average is the expected one
    env = make_rooms(2, 2, kind="cycle", seed=0)
    exact = return_mixing_time_exact(env.mdp, env.reference_policy, 0.2, relative=True, horizon_cap=20_000)
    emp = return_mixing_time_empirical(TabularSimulator(env.mdp), env.reference_policy, 0.2, 50, 50_000, seed=1, relative=True)
    assert emp.rho_estimate == pytest.approx(env.rho_star(), rel=0.01)
    assert emp.mean_tret[0] == pytest.approx(exact.mu_weighted_tret[0], rel=0.2)


def test_bottleneck_identity_two_state():
    chain = MarkovChain(SYM)
    rep = bottleneck_ratio(chain, None, [0])
    assert rep.bottleneck_ratio == pytest.approx(0.25)
    assert rep.residence_time_analytic == pytest.approx(4.0)
    assert rep.edge_flow == pytest.approx(rep.inflow)
    mean, se = residence_time_simulated(chain, [0], steps=200_000, seed=0)
    assert abs(mean - 4.0) < 4 * se


def test_bottleneck_errors():
    chain = MarkovChain(SYM)
    with pytest.raises(InvalidArgument):
        bottleneck_ratio(chain, None, [])
    with pytest.raises(InvalidArgument):
        bottleneck_ratio(chain, None, [0, 1])
    P = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5]])
    with pytest.raises(DegenerateRegion):
        bottleneck_ratio(MarkovChain(P), None, [2])


def test_residence_whole_space_is_infinite():
    mean, se = residence_time_simulated(MarkovChain(SYM), [0, 1], steps=10)
    assert mean == math.inf and math.isnan(se)


def test_sojourn_lengths_drop_censored_runs():
    x = [1, 1, 0, 1, 1, 1, 0, 0, 1, 0, 1]
    assert sojourn_lengths(x).tolist() == [3, 1]


def test_conductance_bounds_spectral_gap():
    # Cheeger: gap / 2 <= Phi for reversible lazy chains
    rng = np.random.default_rng(2)
    for _ in range(10):
        W = rng.random((6, 6))
        W = W + W.T
        P = 0.5 * (np.eye(6) + W / W.sum(axis=1, keepdims=True))
        chain = MarkovChain(P)
        phi, region = conductance_bruteforce(chain)
        assert spectral_gap(chain) / 2 <= phi + 1e-12
        assert bottleneck_ratio(chain, None, region).bottleneck_ratio == pytest.approx(phi)


def test_spectral_gap_two_state():
    assert spectral_gap(MarkovChain(SYM)) == pytest.approx(0.5)


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_diameter_lower_bounds_mixing(n, seed):
    P = random_lazy_chain(n, np.random.default_rng(seed))
    chain = MarkovChain(P)
    assert 2 * exact_mixing_time(chain, 0.25) >= graph_diameter(chain)
