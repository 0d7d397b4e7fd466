import sys
from pathlib import Path

import numpy as np
import pytest

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from core.check_suites import tabular_instance  # noqa: E402
from core.deepset_net import FeatureLayout  # noqa: E402
from core.mf_core import (  # noqa: E402
    ConstantReward,
    LocalActionMap,
    TableReward,
    identity_kernel,
    make_tabular_env,
    symmetric_switch_kernel,
)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tab_env():
    """|S|=3, |Ā|=2, N=4, γ=0.9."""
    return tabular_instance()


@pytest.fixture
def small_tab_env():
    return tabular_instance(n_agents=2)


@pytest.fixture
def identity_env():
    table = np.array([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6]])
    return make_tabular_env(
        name="identity",
        kernel_table=identity_kernel(3, 2),
        reward=TableReward(table),
        action_set=[LocalActionMap.constant(3, 0), LocalActionMap.constant(3, 1)],
        n_agents=4,
        gamma=0.9,
    )


def constant_env(value: float = -0.3, gamma: float = 0.9, n_states: int = 2, n_agents: int = 2, n_actions: int = 2):
    return make_tabular_env(
        name="constant",
        kernel_table=symmetric_switch_kernel(n_states, 1),
        reward=ConstantReward(value),
        action_set=[LocalActionMap.constant(n_states, 0, f"a{i}") for i in range(n_actions)],
        n_agents=n_agents,
        gamma=gamma,
    )


@pytest.fixture
def layout() -> FeatureLayout:
    return FeatureLayout(n_states=3, n_actions=2)
