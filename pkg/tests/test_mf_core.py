import numpy as np
import pytest

from conftest import constant_env
from core.errors import DegenerateConfigurationError, RewardBoundError
from core.mf_core import (
    JointConfig,
    LocalActionMap,
    MfObservation,
    StateHistogram,
    TableReward,
    absorbing_kernel,
    config_from_counts,
    discounted_returns,
    discounted_value_mc,
    empirical_distribution,
    env_step,
    horizon_for,
    identity_kernel,
    make_tabular_env,
    symmetric_switch_kernel,
)


class FixedAction:
    def __init__(self, action_id: int) -> None:
        self.action_id = action_id

    def sample(self, obs, rng) -> int:
        return self.action_id


def test_empirical_distribution_examples() -> None:
    np.testing.assert_allclose(empirical_distribution(JointConfig((0, 0, 1))).mass, [2 / 3, 1 / 3])
    np.testing.assert_allclose(empirical_distribution(JointConfig((2,)), n_states=3).mass, [0.0, 0.0, 1.0])
    np.testing.assert_allclose(empirical_distribution(JointConfig((0, 1, 0, 1))).mass, [0.5, 0.5])


def test_empirical_distribution_rejects_empty_configuration() -> None:
    with pytest.raises(DegenerateConfigurationError, match="degenerate configuration"):
        empirical_distribution(JointConfig(()))


def test_histogram_mass_is_checked() -> None:
    with pytest.raises(ValueError):
        StateHistogram(np.array([0.5, 0.4]))
    with pytest.raises(ValueError):
        StateHistogram(np.array([1.5, -0.5]))


def test_identity_kernel_keeps_configuration_and_reward_is_histogram_average(identity_env, rng) -> None:
    config = JointConfig((0, 1, 2, 2))
    next_config, reward = env_step(identity_env, config, 1, rng)
    assert next_config == config
    assert reward == pytest.approx((-0.2 + 0.4 + 2 * 0.6) / 4)


def test_absorbing_kernel_sends_everyone_to_target(rng) -> None:
    env = make_tabular_env(
        name="absorb",
        kernel_table=absorbing_kernel(3, 1, target=2),
        reward=TableReward(np.zeros((3, 1))),
        action_set=[LocalActionMap.constant(3, 0)],
        n_agents=5,
        gamma=0.5,
    )
    next_config, _ = env_step(env, JointConfig((0, 1, 2, 0, 1)), 0, rng)
    assert next_config.states == (2, 2, 2, 2, 2)


def test_env_step_is_deterministic_given_the_stream() -> None:
    env = make_tabular_env(
        name="switch",
        kernel_table=symmetric_switch_kernel(4, 1),
        reward=TableReward(np.zeros((4, 1))),
        action_set=[LocalActionMap.constant(4, 0)],
        n_agents=6,
        gamma=0.9,
    )
    config = JointConfig((0, 1, 2, 3, 0, 1))
    first = env_step(env, config, 0, np.random.default_rng(7))
    second = env_step(env, config, 0, np.random.default_rng(7))
    assert first == second


def test_env_step_rejects_bad_inputs(identity_env, rng) -> None:
    with pytest.raises(IndexError):
        env_step(identity_env, JointConfig((0, 1, 2, 2)), 2, rng)
    with pytest.raises(DegenerateConfigurationError):
        env_step(identity_env, JointConfig((0, 1)), 0, rng)
    with pytest.raises(DegenerateConfigurationError):
        env_step(identity_env, JointConfig((0, 1, 2, 5)), 0, rng)


def test_reward_bound_is_checked_at_construction() -> None:
    with pytest.raises(RewardBoundError):
        make_tabular_env(
            name="too-big",
            kernel_table=identity_kernel(2, 1),
            reward=TableReward(np.array([[2.0], [0.0]])),
            action_set=[LocalActionMap.constant(2, 0)],
            n_agents=2,
            gamma=0.5,
            reward_bound=1.0,
        )


def test_action_map_validation() -> None:
    with pytest.raises(ValueError):
        LocalActionMap((0, 3)).validate(n_states=2, n_local_actions=2)
    with pytest.raises(ValueError):
        LocalActionMap((0,)).validate(n_states=2, n_local_actions=2)


def test_observation_requires_consistent_self_state() -> None:
    with pytest.raises(ValueError):
        MfObservation(self_state=1, population=JointConfig((0, 1)), self_index=0)
    obs = MfObservation.tagged(JointConfig((0, 1)), 1)
    assert obs.self_state == 1


def test_config_from_counts_puts_first_state_at_index_zero() -> None:
    config = config_from_counts([2, 0, 1], first=2)
    assert config.states == (2, 0, 0)
    assert config.canonical() == (0, 0, 2)


def test_horizon_for_reaches_tail() -> None:
    h = horizon_for(0.9)
    assert 0.9**h <= 1e-6 < 0.9 ** (h - 1)
    assert horizon_for(0.0) == 1


def test_constant_reward_value_is_the_constant(rng) -> None:
    env = constant_env(value=-0.3, gamma=0.9)
    start = MfObservation.tagged(JointConfig((0, 1)), 0)
    value = discounted_value_mc(env, FixedAction(0), start, 0.9, episodes=3, horizon=None, rng=rng)
    assert value == pytest.approx(-0.3, abs=1e-5)


def test_zero_discount_value_is_first_reward(identity_env, rng) -> None:
    start = MfObservation.tagged(JointConfig((0, 1, 2, 2)), 0)
    returns = discounted_returns(identity_env, FixedAction(1), start, 0.0, episodes=4, horizon=None, rng=rng)
    np.testing.assert_allclose(returns, (-0.2 + 0.4 + 2 * 0.6) / 4)


def test_discounted_value_rejects_bad_gamma(identity_env, rng) -> None:
    start = MfObservation.tagged(JointConfig((0, 1, 2, 2)), 0)
    with pytest.raises(ValueError):
        discounted_value_mc(identity_env, FixedAction(0), start, 1.0, 1, None, rng)
