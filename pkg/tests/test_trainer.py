import math
from dataclasses import dataclass

import numpy as np
import pytest
from scipy import stats

from conftest import constant_env
from core.config import global_state
from core.deepset_net import FeatureLayout, MlpParams, forward, forward_all_actions, init_params
from core.errors import NonFiniteError
from core.mf_core import (
    JointConfig,
    LocalActionMap,
    MfObservation,
    TableReward,
    absorbing_kernel,
    identity_kernel,
    make_tabular_env,
    symmetric_switch_kernel,
)
from core.oracle import build_quotient, kl_regularized_argmax
from core.policy import EnergyPolicy
from core.trainer import (
    METRIC_COLUMNS,
    TrainSchedule,
    evaluate_returns,
    generate_samples,
    greedy_policy,
    mf_ppo,
    sample_improvement_dist,
    sample_stationary,
    sgd_policy_improvement,
    td_policy_evaluation,
)


def tiny_schedule(**overrides) -> TrainSchedule:
    values = dict(K=2, T=30, m_actor=8, m_critic=8, eval_episodes=2, eval_horizon=10, seed=3)
    values.update(overrides)
    return TrainSchedule(**values)


def bandit_env():
    """Un seul état : l'action 0 vaut 0, l'action 1 vaut -1."""
    return make_tabular_env(
        name="bandit",
        kernel_table=identity_kernel(1, 2),
        reward=TableReward(np.array([[0.0, -1.0]])),
        action_set=[LocalActionMap.constant(1, 0), LocalActionMap.constant(1, 1)],
        n_agents=2,
        gamma=0.0,
    )


@dataclass(frozen=True)
class NanReward:
    def __call__(self, counts, abar_id) -> float:
        return float("nan")


def test_schedule_identities() -> None:
    schedule = TrainSchedule(K=16, T=400, upsilon=1.0)
    assert schedule.tau(0) == 1.0
    assert schedule.tau(1) == pytest.approx(4.0)
    assert schedule.tau(2) == pytest.approx(2.0)
    assert schedule.upsilon_k == pytest.approx(4.0)
    assert schedule.eta == pytest.approx(0.05)
    assert schedule.step == pytest.approx(min(1.0, 48 * 0.05))
    assert TrainSchedule(K=1, T=400, step_scale=1.0).step == pytest.approx(schedule.eta)
    for k in range(schedule.K):
        assert schedule.tau(k + 1) * (k + 1) == pytest.approx(schedule.upsilon_k)
    assert schedule.resolved_burn_in(0.9) == 50
    assert schedule.resolved_burn_in(0.0) == 5


def test_schedule_rejects_unknown_fields() -> None:
    with pytest.raises(ValueError):
        TrainSchedule(K=1, T=1, learning_rate=0.1)


def test_absorbing_chain_sample_is_at_target(rng) -> None:
    env = make_tabular_env(
        name="absorb",
        kernel_table=absorbing_kernel(3, 1, target=0),
        reward=TableReward(np.zeros((3, 2))),
        action_set=[LocalActionMap.constant(3, 0), LocalActionMap.constant(3, 0)],
        n_agents=3,
        gamma=0.9,
    )
    transition = sample_stationary(env, EnergyPolicy.uniform(FeatureLayout.for_env(env)), 5, rng)
    assert transition.obs.population.states == (0, 0, 0)
    assert transition.next_obs.population.states == (0, 0, 0)


def test_improvement_samples_share_the_stationary_state_marginal(tab_env) -> None:
    policy = EnergyPolicy.uniform(FeatureLayout.for_env(tab_env))
    draws = 600
    stationary_rng, improvement_rng = np.random.default_rng(21), np.random.default_rng(22)
    stationary = np.bincount(
        [sample_stationary(tab_env, policy, 20, stationary_rng).obs.self_state for _ in range(draws)],
        minlength=tab_env.n_states,
    )
    improvement = np.bincount(
        [sample_improvement_dist(tab_env, policy, 20, improvement_rng).obs.self_state for _ in range(draws)],
        minlength=tab_env.n_states,
    )
    table = np.vstack([stationary, improvement])
    table = table[:, table.sum(axis=0) > 0]
    assert stats.chi2_contingency(table).pvalue > 1e-3


def test_sample_stationary_is_deterministic(tab_env) -> None:
    policy = EnergyPolicy.uniform(FeatureLayout.for_env(tab_env))
    first = sample_stationary(tab_env, policy, 10, np.random.default_rng(5))
    second = sample_stationary(tab_env, policy, 10, np.random.default_rng(5))
    assert first == second


def test_symmetric_chain_visits_states_uniformly() -> None:
    env = make_tabular_env(
        name="switch",
        kernel_table=symmetric_switch_kernel(3, 1),
        reward=TableReward(np.zeros((3, 1))),
        action_set=[LocalActionMap.constant(3, 0)],
        n_agents=2,
        gamma=0.9,
    )
    policy = EnergyPolicy.uniform(FeatureLayout.for_env(env))
    samples = generate_samples(env, policy, 3000, 5, "restart", np.random.default_rng(8))
    counts = np.bincount([t.obs.self_state for t in samples], minlength=3)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_improvement_samples_record_uniform_actions(tab_env) -> None:
    layout = FeatureLayout.for_env(tab_env)
    actor = init_params(16, layout.dim, 10.0, np.random.default_rng(0))
    policy = EnergyPolicy(actor, 0.05, layout.n_actions, layout)
    samples = generate_samples(tab_env, policy, 6000, 10, "chain", np.random.default_rng(2), uniform=True)
    counts = np.bincount([t.action_id for t in samples], minlength=layout.n_actions)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_restart_samples_do_not_depend_on_pool_size(tab_env, monkeypatch) -> None:
    policy = EnergyPolicy.uniform(FeatureLayout.for_env(tab_env))
    monkeypatch.setitem(global_state, "threads", 1)
    serial = generate_samples(tab_env, policy, 40, 5, "restart", np.random.default_rng(6))
    monkeypatch.setitem(global_state, "threads", 4)
    pooled = generate_samples(tab_env, policy, 40, 5, "restart", np.random.default_rng(6))
    assert serial == pooled


def test_unknown_sampling_mode(tab_env, rng) -> None:
    with pytest.raises(ValueError):
        generate_samples(tab_env, EnergyPolicy.uniform(FeatureLayout.for_env(tab_env)), 3, 5, "replay", rng)


def test_td_recovers_constant_reward_without_discount() -> None:
    env = constant_env(value=-0.3, gamma=0.0)
    layout = FeatureLayout.for_env(env)
    schedule = TrainSchedule(K=1, T=2000, m_actor=256, m_critic=256, seed=0)
    rng = np.random.default_rng(0)
    critic = init_params(256, layout.dim, schedule.radius_critic, rng, centered=True)
    critic = td_policy_evaluation(env, EnergyPolicy.uniform(layout), critic, schedule, rng)
    quotient = build_quotient(env)
    for c in range(quotient.n_classes):
        values = forward_all_actions(critic, quotient.representative(c), layout)
        np.testing.assert_allclose(values, -0.3, atol=0.05)


def test_inner_loops_respect_the_ball(tab_env) -> None:
    layout = FeatureLayout.for_env(tab_env)
    schedule = TrainSchedule(K=2, T=200, m_actor=16, m_critic=16, radius_actor=0.05, radius_critic=0.05)
    rng = np.random.default_rng(1)
    displacements = []

    def watch(t, params, loss, transition) -> None:
        displacements.append(params.displacement())

    policy = EnergyPolicy.uniform(layout)
    critic = td_policy_evaluation(
        tab_env, policy, init_params(16, layout.dim, 0.05, rng), schedule, rng, trace=watch
    )
    actor = sgd_policy_improvement(
        tab_env, policy, critic, init_params(16, layout.dim, 0.05, rng), schedule, 0, rng, trace=watch
    )
    assert len(displacements) == 2 * schedule.T
    assert max(displacements) <= 0.05 + 1e-12
    assert critic.displacement() <= 0.05 + 1e-12
    assert actor.displacement() <= 0.05 + 1e-12


def test_improvement_reduces_regression_loss_toward_previous_actor(tab_env) -> None:
    layout = FeatureLayout.for_env(tab_env)
    schedule = TrainSchedule(K=16, T=3000, m_actor=64, m_critic=64)
    rng = np.random.default_rng(2)
    previous = init_params(64, layout.dim, 10.0, rng)
    zero_critic = previous.with_alpha(-np.abs(previous.alpha0) - 1.0)
    # τ_{k+1} = τ_k : la cible est exactement F^A_k
    policy_k = EnergyPolicy(previous, schedule.tau(2), layout.n_actions, layout)
    samples = generate_samples(tab_env, policy_k, schedule.T, 20, "chain", rng, uniform=True)
    start = init_params(64, layout.dim, 10.0, rng)

    def loss(params) -> float:
        return float(
            np.mean([(forward(params, t.obs, t.action_id, layout) - forward(previous, t.obs, t.action_id, layout)) ** 2
                     for t in samples])
        )

    trained = sgd_policy_improvement(tab_env, policy_k, zero_critic, start, schedule, 1, rng, samples=samples)
    assert loss(trained) < 0.9 * loss(start)


def test_improvement_favors_the_better_action() -> None:
    env = bandit_env()
    layout = FeatureLayout.for_env(env)
    schedule = TrainSchedule(K=1, T=20000, m_actor=128, m_critic=128, seed=0)
    rng = np.random.default_rng(3)
    uniform = EnergyPolicy.uniform(layout)
    critic = td_policy_evaluation(env, uniform, init_params(128, layout.dim, 10.0, rng), schedule, rng)
    actor = sgd_policy_improvement(env, uniform, critic, init_params(128, layout.dim, 10.0, rng), schedule, 0, rng)
    obs = MfObservation.tagged(JointConfig((0, 0)), 0)
    improved = EnergyPolicy(actor, schedule.tau(1), layout.n_actions, layout).probabilities(obs)
    target = kl_regularized_argmax(forward_all_actions(critic, obs, layout), [0.5, 0.5], schedule.upsilon_k)
    assert improved[0] > 0.6
    assert target[0] > 0.6


def test_improvement_rejects_iteration_outside_schedule(tab_env, rng) -> None:
    layout = FeatureLayout.for_env(tab_env)
    params = init_params(8, layout.dim, 1.0, rng)
    with pytest.raises(ValueError):
        sgd_policy_improvement(tab_env, EnergyPolicy.uniform(layout), params, params, tiny_schedule(), 2, rng)


def test_mf_ppo_records_and_determinism(small_tab_env) -> None:
    schedule = tiny_schedule()
    seen = []
    first = mf_ppo(small_tab_env, schedule, callback=lambda record, actor, critic: seen.append(record.k))
    second = mf_ppo(small_tab_env, schedule)
    assert seen == [0, 1]
    assert len(first.records) == schedule.K
    for a, b in zip(first.records, second.records):
        row_a, row_b = a.as_row(), b.as_row()
        row_a.pop("wallclock_ms")
        row_b.pop("wallclock_ms")
        assert row_a == row_b
    np.testing.assert_array_equal(first.actor.alpha, second.actor.alpha)
    for record in first.records:
        assert record.tau_k == pytest.approx(schedule.tau(record.k + 1))
        assert -small_tab_env.reward_bound <= record.est_value <= small_tab_env.reward_bound
        assert record.kl_to_prev >= 0.0
    assert list(first.records[0].as_row()) == METRIC_COLUMNS


def test_mf_ppo_single_action_value_is_exact() -> None:
    env = constant_env(value=-0.3, gamma=0.9, n_actions=1)
    result = mf_ppo(env, tiny_schedule(eval_horizon=None))
    assert result.final_value == pytest.approx(-0.3, abs=1e-5)


def test_mf_ppo_variants_run(small_tab_env) -> None:
    result = mf_ppo(small_tab_env, tiny_schedule(critic_arch="mlp", reinit_each_iteration=True, sampling="restart"))
    assert isinstance(result.critic, MlpParams)
    assert len(result.records) == 2


def test_mf_ppo_stops_on_non_finite_loss() -> None:
    env = make_tabular_env(
        name="nan",
        kernel_table=identity_kernel(2, 1),
        reward=NanReward(),
        action_set=[LocalActionMap.constant(2, 0)],
        n_agents=2,
        gamma=0.5,
    )
    with pytest.raises(NonFiniteError):
        mf_ppo(env, tiny_schedule())


def test_evaluate_returns_confidence_interval(small_tab_env) -> None:
    layout = FeatureLayout.for_env(small_tab_env)
    summary = evaluate_returns(small_tab_env, greedy_policy(None, layout), 20, np.random.default_rng(0), horizon=30)
    assert summary.episodes == 20
    assert summary.half_width > 0.0
    assert summary.low < summary.mean < summary.high
    single = evaluate_returns(small_tab_env, EnergyPolicy.uniform(layout), 1, np.random.default_rng(0), horizon=30)
    assert math.isnan(single.half_width)
    with pytest.raises(ValueError):
        evaluate_returns(small_tab_env, EnergyPolicy.uniform(layout), 0, np.random.default_rng(0))
