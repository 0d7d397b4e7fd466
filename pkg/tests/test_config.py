from pathlib import Path

import pytest
import yaml

from core.config import (
    MAX_THREADS,
    build_env,
    global_state,
    load_run_config,
    load_scenarios,
    refresh_threads,
    resolve_env_spec,
)
from core.errors import ConfigError, RewardBoundError

ROOT = Path(__file__).resolve().parents[1]


def write_yaml(path: Path, payload: dict) -> Path:
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    return path


def test_scenario_library() -> None:
    scenarios = load_scenarios()
    assert {"nav-3x3-n2", "nav-4x4-n4", "push-4x4-n3", "tab-3s-n4"} <= scenarios.keys()


def test_named_scenarios_build() -> None:
    nav = build_env(resolve_env_spec({"name": "nav-3x3-n2"}))
    assert (nav.n_states, nav.n_actions, nav.n_agents) == (9, 6, 2)
    tab = build_env(resolve_env_spec({"name": "tab-3s-n4"}))
    assert (tab.n_states, tab.n_actions, tab.n_agents) == (3, 2, 4)


def test_scenario_fields_can_be_overridden() -> None:
    env = build_env(resolve_env_spec({"name": "tab-3s-n4", "n_agents": 2}))
    assert env.n_agents == 2


def test_unknown_environment_name() -> None:
    with pytest.raises(ConfigError, match="unknown environment"):
        resolve_env_spec({"name": "no-such-env"})


def test_shipped_run_configs_load() -> None:
    for path in sorted((ROOT / "configs").glob("*.yaml")):
        config = load_run_config(path)
        assert build_env(config.env).n_agents == config.env.n_agents


def test_unknown_keys_are_rejected(tmp_path) -> None:
    good = {"env": {"name": "tab-3s-n4"}, "schedule": {"K": 2, "T": 10}}
    assert load_run_config(write_yaml(tmp_path / "good.yaml", good)).schedule.K == 2
    with pytest.raises(ConfigError, match="unknown top-level"):
        load_run_config(write_yaml(tmp_path / "top.yaml", {**good, "extra": 1}))
    with pytest.raises(ConfigError):
        load_run_config(write_yaml(tmp_path / "sched.yaml", {**good, "schedule": {"K": 2, "T": 10, "lr": 0.1}}))
    with pytest.raises(ConfigError):
        load_run_config(write_yaml(tmp_path / "run.yaml", {**good, "run": {"checks": ["nope"]}}))


def test_missing_file_and_bad_yaml(tmp_path) -> None:
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("env: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(bad)


def test_inline_tabular_env() -> None:
    spec = resolve_env_spec(
        {
            "name": "inline",
            "kind": "tabular",
            "n_states": 2,
            "n_local_actions": 2,
            "n_agents": 3,
            "gamma": 0.5,
            "kernel": "cycle",
            "reward": {"type": "congestion"},
        }
    )
    env = build_env(spec)
    assert env.n_actions == 2


def test_inline_tabular_env_errors() -> None:
    base = {
        "name": "inline",
        "kind": "tabular",
        "n_states": 2,
        "n_local_actions": 1,
        "n_agents": 2,
        "gamma": 0.5,
        "kernel": "identity",
    }
    with pytest.raises(ConfigError):
        resolve_env_spec({**base, "reward": {"type": "table"}})
    with pytest.raises(ConfigError):
        resolve_env_spec({**base, "kernel": "teleport", "reward": {"type": "congestion"}})
    with pytest.raises(ConfigError, match="reward table"):
        build_env(resolve_env_spec({**base, "reward": {"type": "table", "table": [[0.0, 0.0]]}}))
    with pytest.raises(RewardBoundError):
        build_env(resolve_env_spec({**base, "reward": {"type": "constant", "value": 3.0}}))


def test_thread_count_is_clamped(monkeypatch) -> None:
    monkeypatch.setitem(global_state, "threads", global_state["threads"])
    monkeypatch.setenv("MFPPO_THREADS", "100")
    assert refresh_threads() == MAX_THREADS
    monkeypatch.setenv("MFPPO_THREADS", "0")
    assert refresh_threads() == 1
    monkeypatch.setenv("MFPPO_THREADS", "many")
    assert refresh_threads() == 4
