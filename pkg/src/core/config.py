"""
Configuration globale - MF-PPO

Ce module contient la configuration globale de l'application, incluant :
- Variables d'état global lues depuis l'environnement
- Schémas validés (pydantic) des environnements, du calendrier et des runs
- Chargement des fichiers YAML et de la bibliothèque de scénarios

Variables principales:
- global_state: État partagé de l'application
- TEMP_DIR: Répertoire temporaire du système
- SCENARIO_FILE: Bibliothèque de scénarios livrée avec le dépôt
"""

import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.envs import GridWorldSpec, make_navigation_env, make_push_env
from core.errors import ConfigError
from core.mf_core import (
    BUILTIN_KERNELS,
    CongestionReward,
    ConstantReward,
    LocalActionMap,
    MeanFieldEnv,
    TableReward,
    make_tabular_env,
)

logger = logging.getLogger(__name__)

# Configuration de l'environnement
TEMP_DIR = tempfile.gettempdir()
MAX_THREADS = 32

SCENARIO_FILE = Path(__file__).resolve().parents[2] / "scenarios" / "scenarios.yaml"


def _read_threads() -> int:
    try:
        value = int(os.environ.get("MFPPO_THREADS", "4"))
    except ValueError:
        value = 4
    return min(max(value, 1), MAX_THREADS)


# Variable globale pour stocker les réglages du processus
global_state = {
    "threads": _read_threads(),  # Taille du pool de génération d'échantillons
    "out_dir": os.environ.get("MFPPO_OUT", os.path.join(TEMP_DIR, "mfppo_runs")),
    "log_level": os.environ.get("MFPPO_LOG_LEVEL", "INFO").upper(),
    "scenario_file": str(SCENARIO_FILE),
}


# Fonction pour obtenir la taille du pool
def get_pool_size() -> int:
    """
    Retourne la taille du pool de threads pour la génération d'échantillons.

    La taille est bornée dans [1, 32] ; les résultats ne dépendent pas de
    cette valeur (flux aléatoires dérivés par échantillon).

    Returns:
        int: Nombre de threads à utiliser
    """
    return global_state["threads"]


def refresh_threads() -> int:
    """Relit MFPPO_THREADS (utile après modification de l'environnement)."""
    global_state["threads"] = _read_threads()
    return global_state["threads"]


def show_runtime_info() -> str:
    return (
        f"MF-PPO - pool: {global_state['threads']} threads - sorties: {global_state['out_dir']} "
        f"- logs: {global_state['log_level']}"
    )


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RewardSpec(StrictModel):
    """Récompense d'équipe nommée : table par (état, ā), constante ou congestion."""

    type: Literal["table", "constant", "congestion"]
    table: Optional[List[List[float]]] = None
    value: Optional[float] = None

    @model_validator(mode="after")
    def _payload(self) -> "RewardSpec":
        if self.type == "table" and self.table is None:
            raise ValueError("reward type 'table' requires 'table'")
        if self.type == "constant" and self.value is None:
            raise ValueError("reward type 'constant' requires 'value'")
        return self


class EnvSpec(StrictModel):
    """
    Schéma d'environnement partagé par les fichiers de run et la bibliothèque.

    `kind: tabular` utilise n_states, n_local_actions, action_set, kernel et
    reward ; `navigation` et `push` utilisent les options de grille.
    """

    name: str
    kind: Literal["tabular", "navigation", "push"] = "tabular"
    n_agents: int = Field(ge=1)
    gamma: float = Field(ge=0.0, lt=1.0)
    reward_bound: float = Field(default=1.0, gt=0.0)
    initial_dist: Optional[List[float]] = None
    # tabulaire
    n_states: Optional[int] = Field(default=None, ge=1)
    n_local_actions: Optional[int] = Field(default=None, ge=1)
    action_set: Optional[List[List[int]]] = None
    kernel: Union[str, List[List[List[float]]], None] = None
    reward: Optional[RewardSpec] = None
    # grille
    side: Optional[int] = Field(default=None, ge=1)
    landmarks: Optional[List[Tuple[int, int]]] = None
    slip: float = Field(default=0.0, ge=0.0, lt=1.0)
    ball_start: Optional[Tuple[int, int]] = None

    @model_validator(mode="after")
    def _required_fields(self) -> "EnvSpec":
        if self.kind == "tabular":
            missing = [key for key in ("n_states", "n_local_actions", "kernel", "reward") if getattr(self, key) is None]
            if missing:
                raise ValueError(f"tabular env requires {', '.join(missing)}")
            if isinstance(self.kernel, str) and self.kernel not in BUILTIN_KERNELS:
                raise ValueError(f"unknown builtin kernel {self.kernel!r}, expected one of {sorted(BUILTIN_KERNELS)}")
        elif self.side is None or not self.landmarks:
            raise ValueError(f"{self.kind} env requires side and landmarks")
        return self


def build_env(spec: EnvSpec) -> MeanFieldEnv:
    """
    Construit l'environnement décrit par une spécification validée.

    Args:
        spec (EnvSpec): Spécification

    Returns:
        MeanFieldEnv: Environnement immuable
    """
    if spec.kind in ("navigation", "push"):
        grid = GridWorldSpec(
            name=spec.name,
            side=spec.side,
            landmarks=list(spec.landmarks),
            slip=spec.slip,
            n_agents=spec.n_agents,
            gamma=spec.gamma,
            ball_start=spec.ball_start,
        )
        return make_navigation_env(grid) if spec.kind == "navigation" else make_push_env(grid)

    if isinstance(spec.kernel, str):
        kernel_table = BUILTIN_KERNELS[spec.kernel](spec.n_states, spec.n_local_actions)
    else:
        kernel_table = np.asarray(spec.kernel, dtype=np.float64)
    if spec.action_set is None:
        action_set = [LocalActionMap.constant(spec.n_states, a) for a in range(spec.n_local_actions)]
    else:
        action_set = [LocalActionMap(tuple(row), name=f"map-{i}") for i, row in enumerate(spec.action_set)]
    if spec.reward.type == "table":
        reward = TableReward(np.asarray(spec.reward.table, dtype=np.float64))
        if reward.table.shape != (spec.n_states, len(action_set)):
            raise ConfigError(f"reward table must have shape ({spec.n_states}, {len(action_set)})")
    elif spec.reward.type == "constant":
        reward = ConstantReward(spec.reward.value)
    else:
        reward = CongestionReward()
    return make_tabular_env(
        name=spec.name,
        kernel_table=kernel_table,
        reward=reward,
        action_set=action_set,
        n_agents=spec.n_agents,
        gamma=spec.gamma,
        reward_bound=spec.reward_bound,
        initial_dist=None if spec.initial_dist is None else np.asarray(spec.initial_dist),
    )


class TrainSchedule(StrictModel):
    """
    Calendrier de MF-PPO.

    Les grandeurs dérivées (τ_k, υ_k, η, burn-in par défaut) sont des
    propriétés recalculées à chaque accès.
    """

    K: int = Field(ge=1)
    T: int = Field(ge=1)
    upsilon: float = Field(default=1.0, gt=0.0)
    gamma: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    radius_actor: float = Field(default=10.0, gt=0.0)
    radius_critic: float = Field(default=10.0, gt=0.0)
    m_actor: int = Field(default=128, ge=1)
    m_critic: int = Field(default=128, ge=1)
    burn_in: Optional[int] = Field(default=None, ge=1)
    seed: int = 0
    sampling: Literal["chain", "restart"] = "chain"
    critic_arch: Literal["deepset", "mlp"] = "deepset"
    reinit_each_iteration: bool = False
    eval_episodes: int = Field(default=32, ge=1)
    eval_horizon: Optional[int] = Field(default=None, ge=1)
    step_scale: float = Field(default=48.0, gt=0.0)
    max_step: float = Field(default=1.0, gt=0.0)
    centered_init: bool = True

    def tau(self, k: int) -> float:
        """τ_k : 1 pour la politique initiale, puis υ√K/k."""
        if k < 0:
            raise ValueError("k must be >= 0")
        return 1.0 if k == 0 else self.upsilon * math.sqrt(self.K) / k

    @property
    def upsilon_k(self) -> float:
        return self.upsilon * math.sqrt(self.K)

    @property
    def eta(self) -> float:
        return 1.0 / math.sqrt(self.T)

    @property
    def step(self) -> float:
        """
        Pas effectif des boucles internes : min(max_step, step_scale·η).

        step_scale = 1 et max_step ≥ η redonnent le pas nominal T^{-1/2}.
        """
        return min(self.max_step, self.step_scale * self.eta)

    def resolved_gamma(self, env_gamma: float) -> float:
        return env_gamma if self.gamma is None else self.gamma

    def resolved_burn_in(self, gamma: float) -> int:
        """Par défaut ceil(5/(1-γ))."""
        return self.burn_in if self.burn_in is not None else math.ceil(round(5.0 / (1.0 - gamma), 9))


CheckSuite = Literal["invariance", "gradients", "counting", "prop4", "td-oracle", "linearization", "all"]


class RunSettings(StrictModel):
    out_dir: Optional[str] = None
    checkpoint_every: int = Field(default=0, ge=0)
    checks: List[CheckSuite] = Field(default_factory=list)
    eval_episodes: int = Field(default=100, ge=1)


class RunConfig(StrictModel):
    """Fichier de run complet : env, schedule, run."""

    env: EnvSpec
    schedule: TrainSchedule
    run: RunSettings = Field(default_factory=RunSettings)


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    return data


def load_scenarios(path: Union[str, Path, None] = None) -> Dict[str, Dict[str, Any]]:
    """Bibliothèque de scénarios nommés (nom -> spécification brute)."""
    data = _read_yaml(path or global_state["scenario_file"])
    return {name: dict(body, name=name) for name, body in data.items()}


def resolve_env_spec(raw: Dict[str, Any], scenarios: Optional[Dict[str, Dict[str, Any]]] = None) -> EnvSpec:
    """
    Résout la section `env` : soit {name: <scénario>} (avec surcharges
    éventuelles), soit une spécification complète.
    """
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError("env section requires a 'name'")
    body = dict(raw)
    if "kind" not in body and not {"n_states", "side"} & body.keys():
        library = scenarios if scenarios is not None else load_scenarios()
        if body["name"] not in library:
            raise ConfigError(f"unknown environment {body['name']!r}; known: {', '.join(sorted(library))}")
        body = {**library[body["name"]], **body}
    try:
        return EnvSpec.model_validate(body)
    except ValidationError as e:
        raise ConfigError(f"invalid env spec: {e}") from e


def load_run_config(path: Union[str, Path], scenarios: Optional[Dict[str, Dict[str, Any]]] = None) -> RunConfig:
    """
    Charge et valide un fichier de run YAML.

    Args:
        path: Chemin du fichier
        scenarios: Bibliothèque déjà chargée (sinon scenarios/scenarios.yaml)

    Returns:
        RunConfig: Configuration validée (clé inconnue = erreur)
    """
    data = _read_yaml(path)
    unknown = set(data) - {"env", "schedule", "run"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    if "env" not in data or "schedule" not in data:
        raise ConfigError("config requires 'env' and 'schedule' sections")
    env_spec = resolve_env_spec(data["env"], scenarios)
    try:
        return RunConfig.model_validate(
            {"env": env_spec, "schedule": data["schedule"], "run": data.get("run") or {}}
        )
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e
