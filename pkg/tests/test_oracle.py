import itertools

import numpy as np
import pytest
from scipy import stats

from conftest import constant_env
from core.check_suites import tabular_instance
from core.deepset_net import FeatureLayout
from core.envs import GridWorldSpec, make_navigation_env
from core.errors import InstanceTooLargeError, SolverError
from core.mf_core import (
    JointConfig,
    LocalActionMap,
    MfObservation,
    TableReward,
    discounted_returns,
    horizon_for,
    identity_kernel,
    make_tabular_env,
    symmetric_switch_kernel,
)
from core.oracle import (
    bellman_q,
    build_quotient,
    class_policy,
    class_table_rows,
    exact_q,
    greedy_table,
    joint_value_iteration,
    kl_regularized_argmax,
    lift_values,
    multinomial_pmf,
    optimal_value,
    policy_value,
    start_distribution,
)
from core.policy import EnergyPolicy, softmax_probs, total_variation
from core.symmetry import audit_invariance, class_count


def uniform_table(q) -> np.ndarray:
    return np.full((q.n_classes, q.n_actions), 1.0 / q.n_actions)


def test_quotient_classes_pair_tagged_state_with_multiset() -> None:
    env = constant_env(n_states=2, n_agents=2)
    q = build_quotient(env)
    assert set(q.classes) == {(0, (0, 0)), (0, (0, 1)), (1, (0, 1)), (1, (1, 1))}
    assert q.n_classes <= class_count(2, 2) * 2


def test_quotient_rows_are_distributions(tab_env) -> None:
    q = build_quotient(tab_env)
    for kernel in q.kernels:
        np.testing.assert_allclose(np.asarray(kernel.sum(axis=1)).ravel(), 1.0, atol=1e-10)


def test_identity_kernel_gives_identity_quotient(identity_env) -> None:
    q = build_quotient(identity_env)
    for kernel in q.kernels:
        np.testing.assert_allclose(kernel.toarray(), np.eye(q.n_classes))


def test_quotient_guard() -> None:
    env = make_tabular_env(
        name="big",
        kernel_table=identity_kernel(16, 1),
        reward=TableReward(np.zeros((16, 1))),
        action_set=[LocalActionMap.constant(16, 0)],
        n_agents=10,
        gamma=0.5,
    )
    with pytest.raises(InstanceTooLargeError):
        build_quotient(env)


def test_multinomial_pmf_sums_to_one() -> None:
    probs = np.array([0.2, 0.5, 0.3])
    total = sum(
        multinomial_pmf(np.bincount(combo, minlength=3), probs)
        for combo in itertools.combinations_with_replacement(range(3), 4)
    )
    assert total == pytest.approx(1.0, abs=1e-12)


def test_constant_reward_gives_constant_q() -> None:
    q = build_quotient(constant_env(value=-0.3, gamma=0.9, n_states=3, n_agents=3))
    np.testing.assert_allclose(exact_q(q, uniform_table(q)), -0.3, atol=1e-12)
    values, _ = optimal_value(q)
    np.testing.assert_allclose(values, -0.3, atol=1e-9)


def test_zero_discount_q_is_reward() -> None:
    env = tabular_instance(gamma=0.0, n_agents=3)
    q = build_quotient(env)
    np.testing.assert_allclose(exact_q(q, uniform_table(q)), q.reward, atol=1e-14)


def test_two_class_chain_matches_series() -> None:
    env = make_tabular_env(
        name="two-class",
        kernel_table=symmetric_switch_kernel(2, 1),
        reward=TableReward(np.array([[1.0], [0.0]])),
        action_set=[LocalActionMap.constant(2, 0)],
        n_agents=1,
        gamma=0.5,
    )
    q = build_quotient(env)
    transition = q.kernels[0].toarray()
    reward = q.reward[:, 0]
    series = np.zeros(q.n_classes)
    power = np.eye(q.n_classes)
    for t in range(200):
        series += 0.5**t * power @ reward
        power = power @ transition
    np.testing.assert_allclose(policy_value(q, uniform_table(q)), 0.5 * series, atol=1e-12)


def test_exact_value_agrees_with_monte_carlo(small_tab_env) -> None:
    q = build_quotient(small_tab_env)
    layout = FeatureLayout.for_env(small_tab_env)
    policy = EnergyPolicy.uniform(layout)
    values = policy_value(q, class_policy(q, policy))
    start = MfObservation.tagged(JointConfig((1, 2)), 0)
    returns = discounted_returns(
        small_tab_env, policy, start, 0.9, 1000, horizon_for(0.9), np.random.default_rng(21)
    )
    assert abs(returns.mean() - values[q.class_of(start)]) <= 3.0 * stats.sem(returns)


def test_single_action_optimal_value_equals_policy_value() -> None:
    env = make_tabular_env(
        name="single",
        kernel_table=symmetric_switch_kernel(3, 1),
        reward=TableReward(np.array([[0.0], [-1.0], [-0.5]])),
        action_set=[LocalActionMap.constant(3, 0)],
        n_agents=3,
        gamma=0.8,
    )
    q = build_quotient(env)
    values, greedy = optimal_value(q, tol=1e-12)
    np.testing.assert_allclose(values, policy_value(q, uniform_table(q)), atol=1e-10)
    assert np.all(greedy == 0)


def test_value_iteration_contracts(tab_env) -> None:
    q = build_quotient(tab_env)
    trace = []
    optimal_value(q, tol=1e-10, trace=trace)
    assert len(trace) > 1
    for before, after in zip(trace, trace[1:]):
        assert after <= q.gamma * before + 1e-12


def test_zero_discount_value_iteration_stops_after_one_sweep() -> None:
    q = build_quotient(tabular_instance(gamma=0.0, n_agents=2))
    trace = []
    values, greedy = optimal_value(q, trace=trace)
    assert len(trace) == 1
    np.testing.assert_allclose(values, q.reward.max(axis=1))


def test_greedy_policy_is_a_fixed_point(tab_env) -> None:
    q = build_quotient(tab_env)
    _, greedy = optimal_value(q, tol=1e-12)
    table = greedy_table(q, greedy)
    q_greedy = bellman_q(q, policy_value(q, table))
    np.testing.assert_array_equal(np.argmax(q_greedy, axis=1), greedy)
    np.testing.assert_allclose(exact_q(q, table), q_greedy)


@pytest.mark.parametrize(
    "env",
    [
        tabular_instance(gamma=0.9, n_agents=3),
        make_navigation_env(GridWorldSpec(name="nav", side=3, landmarks=[(0, 0), (2, 2)], slip=0.1, n_agents=2)),
    ],
    ids=["tabular", "navigation"],
)
def test_quotient_loses_nothing_against_joint_solver(env) -> None:
    q = build_quotient(env)
    quotient_values, _ = optimal_value(q, tol=1e-12)
    joint = joint_value_iteration(env, tol=1e-12)
    for states in itertools.product(range(env.n_states), repeat=env.n_agents):
        config = JointConfig(states)
        lifted = quotient_values[q.class_of(MfObservation.tagged(config, 0))]
        assert joint.value_of(config) == pytest.approx(lifted, abs=1e-9)


def test_joint_solver_guard() -> None:
    with pytest.raises(InstanceTooLargeError):
        joint_value_iteration(tabular_instance(n_agents=9))


def test_lifted_exact_q_is_invariant(tab_env, rng) -> None:
    q = build_quotient(tab_env)
    table = exact_q(q, uniform_table(q))
    report = audit_invariance(tab_env, lambda obs, a: lift_values(q, table, obs)[a], 200, 0.0, rng)
    assert report.max_violation == 0.0


def test_start_distribution_sums_to_one(tab_env) -> None:
    q = build_quotient(tab_env)
    assert start_distribution(q, tab_env.initial_dist).sum() == pytest.approx(1.0, abs=1e-12)


def test_kl_regularized_argmax_examples() -> None:
    np.testing.assert_allclose(kl_regularized_argmax([0.3, 0.3, 0.3], [0.2, 0.3, 0.5], 0.7), [0.2, 0.3, 0.5], atol=1e-12)
    np.testing.assert_allclose(
        kl_regularized_argmax([1.0, 0.0], [0.5, 0.5], 1.0), [np.e / (np.e + 1), 1 / (np.e + 1)], atol=1e-6
    )
    assert kl_regularized_argmax([1.0, 0.0, 0.5], [1 / 3] * 3, 1e-6)[0] >= 1 - 1e-3


def test_kl_regularized_argmax_matches_closed_form() -> None:
    rng = np.random.default_rng(4)
    for _ in range(100):
        size = int(rng.integers(2, 6))
        q_values = rng.normal(scale=2.0, size=size)
        prev = rng.dirichlet(np.ones(size)) + 1e-6
        prev /= prev.sum()
        upsilon = float(rng.uniform(0.05, 5.0))
        closed = softmax_probs(np.log(prev) + q_values / upsilon)
        assert total_variation(kl_regularized_argmax(q_values, prev, upsilon), closed) <= 1e-6


def test_kl_regularized_argmax_solution_mass_comes_from_the_dual_root() -> None:
    solution = kl_regularized_argmax([1.0, 0.0, 0.5], [1 / 3] * 3, 1.0)
    assert abs(solution.sum() - 1.0) <= 1e-10
    lam = np.log(np.mean(np.exp([1.0, 0.0, 0.5]))) - 1.0
    np.testing.assert_allclose(solution, np.exp(np.array([1.0, 0.0, 0.5]) - lam - 1.0) / 3, atol=1e-12)


def test_kl_regularized_argmax_rejects_a_wrong_multiplier(monkeypatch) -> None:
    # racine fausse : milieu de l'intervalle d'encadrement
    monkeypatch.setattr("core.oracle.brentq", lambda f, a, b, **kwargs: 0.5 * (a + b))
    with pytest.raises(SolverError):
        kl_regularized_argmax([1.0, 0.0, 0.5], [1 / 3] * 3, 1.0)


def test_kl_regularized_argmax_rejects_bad_inputs() -> None:
    with pytest.raises(ValueError):
        kl_regularized_argmax([1.0, 0.0], [0.5, 0.5], 0.0)
    with pytest.raises(ValueError):
        kl_regularized_argmax([1.0, 0.0], [1.0, 0.0], 1.0)


def test_class_table_rows(tab_env) -> None:
    q = build_quotient(tab_env)
    values, greedy = optimal_value(q)
    rows = class_table_rows(q, {"reward": q.reward, "v_star": values, "greedy": greedy})
    assert len(rows) == q.n_classes
    assert {"class", "s0", "multiset", "reward_0", "reward_1", "v_star", "greedy"} <= rows[0].keys()
