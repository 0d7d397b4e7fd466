"""
Noyau champ moyen - MF-PPO

Ce module contient les types du domaine et l'interface du MDP champ moyen :
- États d'agent, configurations jointes et histogrammes empiriques
- Applications d'action locales ā : S -> A et ensemble fini Ā
- Environnement construit à partir d'un noyau local partagé et d'une
  récompense d'équipe fonction de l'histogramme (invariance par permutation
  vraie par construction)
- Estimation Monte-Carlo de V^π avec le préfacteur (1-γ)

Functions:
- empirical_distribution(): Histogramme empirique d'une configuration
- env_step(): Transition d'une configuration sous une action ā
- discounted_value_mc(): Estimation Monte-Carlo de la valeur actualisée
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NewType, Optional, Protocol, Sequence, Tuple

import numpy as np

from core.errors import DegenerateConfigurationError, RewardBoundError

logger = logging.getLogger(__name__)

AgentState = NewType("AgentState", int)

# Tolérance sur la masse totale d'un histogramme
MASS_TOLERANCE = 1e-12


@dataclass(frozen=True)
class JointConfig:
    """Configuration jointe ordonnée des N agents."""

    states: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, index: int) -> int:
        return self.states[index]

    def counts(self, n_states: int) -> np.ndarray:
        """Nombre d'agents par état."""
        if not self.states:
            raise DegenerateConfigurationError("empty configuration")
        return np.bincount(np.asarray(self.states, dtype=np.int64), minlength=n_states)

    def canonical(self) -> Tuple[int, ...]:
        """Représentant canonique (trié) de la classe de permutation."""
        return tuple(sorted(self.states))


@dataclass(frozen=True, eq=False)
class StateHistogram:
    """Distribution d'états d_S (masse par état)."""

    mass: np.ndarray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.ndim != 1 or np.any(mass < 0):
            raise ValueError("histogram mass must be a nonnegative vector")
        if abs(mass.sum() - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"histogram mass sums to {mass.sum()!r}, expected 1")
        object.__setattr__(self, "mass", mass)

    def __getitem__(self, state: int) -> float:
        return float(self.mass[state])

    def __len__(self) -> int:
        return len(self.mass)


@dataclass(frozen=True)
class LocalActionMap:
    """Élément ā de Ā : une action primitive par état local."""

    assignment: Tuple[int, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "assignment", tuple(int(a) for a in self.assignment))

    def __call__(self, state: int) -> int:
        return self.assignment[state]

    def validate(self, n_states: int, n_local_actions: int) -> None:
        if len(self.assignment) != n_states:
            raise ValueError(
                f"action map {self.name or self.assignment} has {len(self.assignment)} entries, expected {n_states}"
            )
        if any(a < 0 or a >= n_local_actions for a in self.assignment):
            raise ValueError(f"action map {self.name or self.assignment} has ids outside [0, {n_local_actions})")

    @classmethod
    def constant(cls, n_states: int, action: int, name: str = "") -> "LocalActionMap":
        return cls(tuple([action] * n_states), name=name or f"const-{action}")


@dataclass(frozen=True)
class MfObservation:
    """Vue (s, d_S) d'un agent marqué : son état et la population complète."""

    self_state: int
    population: JointConfig
    self_index: int = 0

    def __post_init__(self):
        if not 0 <= self.self_index < len(self.population):
            raise IndexError(f"self_index {self.self_index} outside population of size {len(self.population)}")
        if self.population[self.self_index] != self.self_state:
            raise ValueError("self_state must equal population[self_index]")

    @classmethod
    def tagged(cls, config: JointConfig, index: int) -> "MfObservation":
        return cls(self_state=config[index], population=config, self_index=index)


@dataclass(frozen=True)
class Transition:
    """Tuple (s, s̄, ā, r, s', s̄', ā') consommé par les boucles internes."""

    obs: MfObservation
    action_id: int
    reward: float
    next_obs: MfObservation
    next_action_id: int


class LocalKernel(Protocol):
    """P_loc(s' | s, histogramme, a) : renvoie un vecteur de probabilités sur S."""

    def __call__(self, state: int, counts: np.ndarray, action: int) -> np.ndarray: ...


class TeamReward(Protocol):
    """r(s, d_S, ā) évaluée sur les effectifs de la configuration."""

    def __call__(self, counts: np.ndarray, abar_id: int) -> float: ...


class ActingPolicy(Protocol):
    def sample(self, obs: MfObservation, rng: np.random.Generator) -> int: ...


# Noyaux et récompenses tabulaires

@dataclass(frozen=True, eq=False)
class TabularKernel:
    """Noyau local indépendant de l'histogramme, table (|S|, |A|, |S|)."""

    table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.float64)
        if table.ndim != 3 or table.shape[0] != table.shape[2]:
            raise ValueError("kernel table must have shape (|S|, |A|, |S|)")
        if np.any(table < 0) or not np.allclose(table.sum(axis=2), 1.0, atol=1e-10):
            raise ValueError("kernel table rows must be probability vectors")
        object.__setattr__(self, "table", table)

    def __call__(self, state: int, counts: np.ndarray, action: int) -> np.ndarray:
        return self.table[state, action]


@dataclass(frozen=True, eq=False)
class TableReward:
    """r = Σ_x d(x)·table[x, ā] : moyenne d'une récompense locale par état."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", np.asarray(self.table, dtype=np.float64))

    def __call__(self, counts: np.ndarray, abar_id: int) -> float:
        return float(counts @ self.table[:, abar_id] / counts.sum())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.table)))


@dataclass(frozen=True)
class ConstantReward:
    value: float

    def __call__(self, counts: np.ndarray, abar_id: int) -> float:
        return float(self.value)

    def max_abs(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class CongestionReward:
    """r = -Σ_x d(x)² : pénalise l'encombrement (vaut -1 si tous au même état)."""

    def __call__(self, counts: np.ndarray, abar_id: int) -> float:
        mass = counts / counts.sum()
        return float(-np.dot(mass, mass))

    def max_abs(self) -> float:
        return 1.0


def identity_kernel(n_states: int, n_local_actions: int) -> np.ndarray:
    return np.broadcast_to(np.eye(n_states)[:, None, :], (n_states, n_local_actions, n_states)).copy()


def absorbing_kernel(n_states: int, n_local_actions: int, target: int = 0) -> np.ndarray:
    table = np.zeros((n_states, n_local_actions, n_states))
    table[:, :, target] = 1.0
    return table


def symmetric_switch_kernel(n_states: int, n_local_actions: int) -> np.ndarray:
    """Reste sur place avec probabilité 1/2, sinon saute uniformément ailleurs."""
    if n_states == 1:
        return identity_kernel(1, n_local_actions)
    base = np.full((n_states, n_states), 0.5 / (n_states - 1))
    np.fill_diagonal(base, 0.5)
    return np.broadcast_to(base[:, None, :], (n_states, n_local_actions, n_states)).copy()


def cycle_kernel(n_states: int, n_local_actions: int) -> np.ndarray:
    """L'action a déplace l'agent de s vers (s + a) mod |S|."""
    table = np.zeros((n_states, n_local_actions, n_states))
    for s in range(n_states):
        for a in range(n_local_actions):
            table[s, a, (s + a) % n_states] = 1.0
    return table


BUILTIN_KERNELS: dict = {
    "identity": identity_kernel,
    "absorbing": absorbing_kernel,
    "symmetric-switch": symmetric_switch_kernel,
    "cycle": cycle_kernel,
}


@dataclass(frozen=True, eq=False)
class MeanFieldEnv:
    """
    Environnement champ moyen à N agents homogènes.

    Construit à partir de deux primitives : le noyau local partagé et la
    récompense d'équipe sur l'histogramme. L'environnement est immuable ;
    un pas est une fonction pure de (configuration, action, état du rng).
    """

    name: str
    n_states: int
    n_local_actions: int
    action_set: Tuple[LocalActionMap, ...]
    n_agents: int
    gamma: float
    reward_bound: float
    kernel: LocalKernel
    reward: TeamReward
    initial_dist: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_states < 1 or self.n_local_actions < 1 or self.n_agents < 1:
            raise ValueError("n_states, n_local_actions and n_agents must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.reward_bound <= 0:
            raise ValueError("reward_bound must be positive")
        object.__setattr__(self, "action_set", tuple(self.action_set))
        if not self.action_set:
            raise ValueError("action set must not be empty")
        for abar in self.action_set:
            abar.validate(self.n_states, self.n_local_actions)
        if self.initial_dist is None:
            initial = np.full(self.n_states, 1.0 / self.n_states)
        else:
            initial = StateHistogram(self.initial_dist).mass
        object.__setattr__(self, "initial_dist", initial)
        # borne r̄ vérifiée à la construction
        max_abs = getattr(self.reward, "max_abs", None)
        if max_abs is not None and max_abs() > self.reward_bound + 1e-12:
            raise RewardBoundError(
                f"reward magnitude {max_abs()} exceeds declared bound {self.reward_bound} for env {self.name!r}"
            )

    @property
    def n_actions(self) -> int:
        """|Ā|"""
        return len(self.action_set)

    def reset(self, rng: np.random.Generator) -> JointConfig:
        """Tirage i.i.d. des N états initiaux selon la distribution déclarée."""
        states = rng.choice(self.n_states, size=self.n_agents, p=self.initial_dist)
        return JointConfig(tuple(states))

    def local_probs(self, state: int, counts: np.ndarray, abar_id: int) -> np.ndarray:
        action = self.action_set[abar_id](state)
        return np.asarray(self.kernel(state, counts, action), dtype=np.float64)

    def team_reward(self, counts: np.ndarray, abar_id: int) -> float:
        value = float(self.reward(counts, abar_id))
        if abs(value) > self.reward_bound + 1e-12:
            raise RewardBoundError(f"reward {value} exceeds bound {self.reward_bound} in env {self.name!r}")
        return value

    def check_config(self, config: JointConfig) -> None:
        if len(config) == 0:
            raise DegenerateConfigurationError("empty configuration")
        if len(config) != self.n_agents:
            raise DegenerateConfigurationError(f"expected {self.n_agents} agents, got {len(config)}")
        if any(s < 0 or s >= self.n_states for s in config):
            raise DegenerateConfigurationError(f"state ids outside [0, {self.n_states})")


def make_tabular_env(
    name: str,
    kernel_table: np.ndarray,
    reward: TeamReward,
    action_set: Sequence[LocalActionMap],
    n_agents: int,
    gamma: float,
    reward_bound: float = 1.0,
    initial_dist: Optional[np.ndarray] = None,
) -> MeanFieldEnv:
    """Assemble un environnement tabulaire à partir d'une table de noyau."""
    kernel = TabularKernel(kernel_table)
    n_states, n_local_actions, _ = kernel.table.shape
    return MeanFieldEnv(
        name=name,
        n_states=n_states,
        n_local_actions=n_local_actions,
        action_set=tuple(action_set),
        n_agents=n_agents,
        gamma=gamma,
        reward_bound=reward_bound,
        kernel=kernel,
        reward=reward,
        initial_dist=initial_dist,
    )


def empirical_distribution(config: JointConfig, n_states: Optional[int] = None) -> StateHistogram:
    """
    Histogramme empirique d'une configuration.

    Args:
        config (JointConfig): Configuration non vide
        n_states (int, optional): |S| ; par défaut max(état) + 1

    Returns:
        StateHistogram: mass[x] = (nombre d'agents en x) / N
    """
    if len(config) == 0:
        raise DegenerateConfigurationError("empty configuration")
    size = n_states if n_states is not None else max(config) + 1
    counts = config.counts(size)
    return StateHistogram(counts / len(config))


def env_step(
    env: MeanFieldEnv, config: JointConfig, action_id: int, rng: np.random.Generator
) -> Tuple[JointConfig, float]:
    """
    Fait évoluer la configuration d'un pas sous l'action partagée ā.

    Chaque agent transite indépendamment selon le noyau local partagé
    évalué en (état propre, histogramme, ā(état propre)). La récompense
    d'équipe est évaluée sur la configuration courante.

    Returns:
        Tuple[JointConfig, float]: Configuration suivante et récompense
    """
    if not 0 <= action_id < env.n_actions:
        raise IndexError(f"action id {action_id} outside [0, {env.n_actions})")
    env.check_config(config)
    counts = config.counts(env.n_states)
    cdfs = {}
    for state in np.flatnonzero(counts):
        cdf = np.cumsum(env.local_probs(int(state), counts, action_id))
        cdf[-1] = 1.0
        cdfs[int(state)] = cdf
    draws = rng.random(len(config))
    last = env.n_states - 1
    next_states = tuple(
        min(int(np.searchsorted(cdfs[s], u, side="right")), last) for s, u in zip(config, draws)
    )
    return JointConfig(next_states), env.team_reward(counts, action_id)


def horizon_for(gamma: float, tail: float = 1e-6) -> int:
    """Plus petit horizon h tel que γ^h ≤ tail."""
    if gamma <= 0.0:
        return 1
    return max(1, math.ceil(math.log(tail) / math.log(gamma)))


def discounted_returns(
    env: MeanFieldEnv,
    policy: ActingPolicy,
    start: MfObservation,
    gamma: float,
    episodes: int,
    horizon: Optional[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Retours (1-γ)Σγ^t r_t de chaque épisode, agent marqué = start.self_index."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    steps = horizon if horizon is not None else horizon_for(gamma)
    returns = np.empty(episodes)
    for episode in range(episodes):
        config = start.population
        total, discount = 0.0, 1.0
        for _ in range(steps):
            obs = MfObservation.tagged(config, start.self_index)
            action_id = policy.sample(obs, rng)
            config, reward = env_step(env, config, action_id, rng)
            total += discount * reward
            discount *= gamma
            if discount == 0.0:
                break
        returns[episode] = (1.0 - gamma) * total
    return returns


def discounted_value_mc(
    env: MeanFieldEnv,
    policy: ActingPolicy,
    start: MfObservation,
    gamma: float,
    episodes: int,
    horizon: Optional[int],
    rng: np.random.Generator,
) -> float:
    """Estimation Monte-Carlo de V^π(s, d_S), préfacteur (1-γ) inclus."""
    return float(discounted_returns(env, policy, start, gamma, episodes, horizon, rng).mean())


def config_from_counts(counts: Sequence[int], first: Optional[int] = None) -> JointConfig:
    """Configuration triée à partir d'effectifs ; `first` est placé en tête (agent 0)."""
    states = [s for s, c in enumerate(counts) for _ in range(int(c))]
    if first is not None:
        states.remove(first)
        states.insert(0, first)
    return JointConfig(tuple(states))


ObservationFn = Callable[[MfObservation, int], float]
