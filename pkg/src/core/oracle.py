"""
Oracles exacts - MF-PPO

Ce module fournit la vérité terrain sur les petites instances :
- Construction du MDP quotient sur les classes (état distingué, multiensemble)
- Évaluation exacte de politique par résolution linéaire (préfacteur 1-γ)
- Itération sur les valeurs pour π* (égalités vers le plus petit identifiant)
- Maximiseur numérique de ⟨Q, π⟩ - υ·KL(π ∥ π_k) par résolution du dual (sans renormalisation)
- Itération sur les valeurs par force brute sur le MDP joint ordonné

L'agent distingué est l'agent 0 (homogénéité des agents).

Functions:
- build_quotient(): MDP quotient exact d'un environnement
- exact_q() / policy_value(): Q^π et V^π d'une politique par classe
- optimal_value(): V* et politique gloutonne
- kl_regularized_argmax(): Solution numérique de la mise à jour proximale
- joint_value_iteration(): Oracle par force brute sur S^N
"""

import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln, logsumexp

from core.errors import InstanceTooLargeError, NonFiniteError, SolverError
from core.mf_core import JointConfig, MeanFieldEnv, MfObservation, config_from_counts
from core.symmetry import class_count, iter_classes

logger = logging.getLogger(__name__)

# Garde-fou sur le nombre de classes (état distingué × multiensemble)
QUOTIENT_CLASS_LIMIT = 10**5
# Garde-fou du MDP joint ordonné |S|^N
JOINT_STATE_LIMIT = 10**4
ROW_SUM_TOLERANCE = 1e-10
# Écart toléré |Σπ - 1| à la racine du dual
SIMPLEX_TOLERANCE = 1e-10

ClassKey = Tuple[int, Tuple[int, ...]]


@dataclass(frozen=True, eq=False)
class QuotientMDP:
    """
    MDP exact sur les classes d'équivalence par permutation.

    `classes[i] = (s0, multiensemble trié des N états)` avec s0 dans le
    multiensemble ; `kernels[a]` est une matrice creuse (classes × classes).
    """

    classes: Tuple[ClassKey, ...]
    kernels: Tuple[sparse.csr_matrix, ...]
    reward: np.ndarray
    gamma: float
    n_states: int
    n_agents: int
    reward_bound: float
    index: Dict[ClassKey, int] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.index:
            object.__setattr__(self, "index", {key: i for i, key in enumerate(self.classes)})

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_actions(self) -> int:
        return len(self.kernels)

    def class_of(self, obs: MfObservation) -> int:
        """Indice de la classe (s, multiensemble) d'une observation."""
        return self.index[(int(obs.self_state), obs.population.canonical())]

    def representative(self, class_id: int) -> MfObservation:
        """Configuration ordonnée de la classe, agent distingué en position 0."""
        s0, multiset = self.classes[class_id]
        counts = np.bincount(np.asarray(multiset), minlength=self.n_states)
        return MfObservation.tagged(config_from_counts(counts, first=s0), 0)


def multinomial_pmf(counts: np.ndarray, probs: np.ndarray) -> float:
    """Loi multinomiale en espace logarithmique (probs utilisées telles quelles, sans renormalisation)."""
    counts = np.asarray(counts, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    active = counts > 0
    if np.any(probs[active] <= 0.0):
        return 0.0
    log_mass = gammaln(counts.sum() + 1) - gammaln(counts[active] + 1).sum() + np.sum(counts[active] * np.log(probs[active]))
    return float(np.exp(log_mass))


def _outcomes(n_movers: int, probs: np.ndarray, n_states: int) -> List[Tuple[np.ndarray, float]]:
    """Lois multinomiales des effectifs d'arrivée de n_movers agents partageant probs."""
    support = np.flatnonzero(probs > 0.0)
    outcomes = []
    for combo in itertools.combinations_with_replacement(support, n_movers):
        counts = np.bincount(np.asarray(combo, dtype=np.int64), minlength=n_states)
        mass = multinomial_pmf(counts, probs)
        if mass > 0.0:
            outcomes.append((counts, mass))
    return outcomes


def _rest_distribution(env: MeanFieldEnv, rest: np.ndarray, counts: np.ndarray, abar_id: int) -> Dict[tuple, float]:
    """Convolution des multinomiales par état de départ (agents autres que l'agent 0)."""
    table: Dict[tuple, float] = {tuple([0] * env.n_states): 1.0}
    for state in np.flatnonzero(rest):
        probs = env.local_probs(int(state), counts, abar_id)
        merged: Dict[tuple, float] = {}
        for arrived, mass in _outcomes(int(rest[state]), probs, env.n_states):
            for partial, weight in table.items():
                key = tuple(np.asarray(partial) + arrived)
                merged[key] = merged.get(key, 0.0) + weight * mass
        table = merged
    return table


def build_quotient(env: MeanFieldEnv, limit: int = QUOTIENT_CLASS_LIMIT) -> QuotientMDP:
    """
    Construit le MDP quotient exact d'un environnement champ moyen.

    Le noyau de classe est obtenu par espérance exhaustive sur les transitions
    individuelles : l'agent 0 suit le noyau local, les autres agents d'un même
    état se répartissent selon une multinomiale.

    Args:
        env (MeanFieldEnv): Environnement à quotienter
        limit (int): Nombre maximal de classes

    Returns:
        QuotientMDP: Classes, noyaux creux par action et table de récompense
    """
    bound = class_count(env.n_agents, env.n_states) * env.n_states
    if bound > limit:
        raise InstanceTooLargeError(f"{bound} classes for |S|={env.n_states}, N={env.n_agents} (limit {limit})")
    start_time = time.time()
    classes = [
        (int(s0), tuple(int(s) for s in multiset))
        for multiset in iter_classes(env.n_agents, env.n_states)
        for s0 in sorted(set(multiset))
    ]
    index = {key: i for i, key in enumerate(classes)}
    reward = np.empty((len(classes), env.n_actions))
    kernels = []
    for abar_id in range(env.n_actions):
        rows, cols, data = [], [], []
        for row, (s0, multiset) in enumerate(classes):
            counts = np.bincount(np.asarray(multiset), minlength=env.n_states)
            reward[row, abar_id] = env.team_reward(counts, abar_id)
            rest = counts.copy()
            rest[s0] -= 1
            own = env.local_probs(s0, counts, abar_id)
            others = _rest_distribution(env, rest, counts, abar_id)
            for s0_next in np.flatnonzero(own > 0.0):
                for arrived, weight in others.items():
                    next_counts = np.asarray(arrived)
                    next_counts[s0_next] += 1
                    key = (int(s0_next), tuple(int(s) for s in np.repeat(np.arange(env.n_states), next_counts)))
                    rows.append(row)
                    cols.append(index[key])
                    data.append(own[s0_next] * weight)
        kernel = sparse.csr_matrix((data, (rows, cols)), shape=(len(classes), len(classes)))
        kernel.sum_duplicates()
        row_sums = np.asarray(kernel.sum(axis=1)).ravel()
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOLERANCE:
            raise ValueError(f"quotient kernel rows for action {abar_id} do not sum to 1")
        kernels.append(kernel)
    logger.info(
        "⏱️  MDP quotient %s: %d classes × %d actions en %.2fs",
        env.name,
        len(classes),
        env.n_actions,
        time.time() - start_time,
    )
    return QuotientMDP(
        classes=tuple(classes),
        kernels=tuple(kernels),
        reward=reward,
        gamma=env.gamma,
        n_states=env.n_states,
        n_agents=env.n_agents,
        reward_bound=env.reward_bound,
        index=index,
    )


def _check_policy(q: QuotientMDP, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (q.n_classes, q.n_actions):
        raise ValueError(f"class policy has shape {policy.shape}, expected {(q.n_classes, q.n_actions)}")
    if np.any(policy < 0) or not np.allclose(policy.sum(axis=1), 1.0, atol=1e-10):
        raise ValueError("class policy rows must be probability vectors")
    return policy


def bellman_q(q: QuotientMDP, values: np.ndarray) -> np.ndarray:
    """Q(c, ā) = (1-γ)·r(c, ā) + γ·Σ_c' P(c'|c, ā)·V(c')"""
    backup = np.column_stack([kernel @ values for kernel in q.kernels])
    return (1.0 - q.gamma) * q.reward + q.gamma * backup


def policy_kernel(q: QuotientMDP, policy: np.ndarray) -> sparse.csr_matrix:
    """P_π(c'|c) = Σ_ā π(ā|c)·P(c'|c, ā)"""
    policy = _check_policy(q, policy)
    return sum(sparse.diags(policy[:, a]) @ q.kernels[a] for a in range(q.n_actions)).tocsr()


def policy_value(q: QuotientMDP, policy: np.ndarray) -> np.ndarray:
    """Résout V = (1-γ)r_π + γP_πV exactement."""
    policy = _check_policy(q, policy)
    p_pi = policy_kernel(q, policy)
    r_pi = np.sum(policy * q.reward, axis=1)
    system = (sparse.identity(q.n_classes, format="csc") - q.gamma * p_pi).tocsc()
    values = np.atleast_1d(spsolve(system, (1.0 - q.gamma) * r_pi))
    if not np.all(np.isfinite(values)):
        raise np.linalg.LinAlgError("singular policy evaluation system")
    return values


def exact_q(q: QuotientMDP, policy: np.ndarray) -> np.ndarray:
    """
    Q^π exacte d'une politique définie par classe.

    Args:
        q (QuotientMDP): MDP quotient
        policy (np.ndarray): Table (classes, |Ā|) de probabilités

    Returns:
        np.ndarray: Table (classes, |Ā|), préfacteur (1-γ) inclus
    """
    return bellman_q(q, policy_value(q, policy))


def _value_iteration(
    kernels: Sequence[sparse.csr_matrix],
    reward: np.ndarray,
    gamma: float,
    tol: float,
    trace: Optional[List[float]],
) -> Tuple[np.ndarray, np.ndarray]:
    if tol <= 0:
        raise ValueError("tol must be positive")
    threshold = tol * (1.0 - gamma) / gamma if gamma > 0 else np.inf
    values = np.zeros(reward.shape[0])
    while True:
        backup = np.column_stack([kernel @ values for kernel in kernels])
        updated = ((1.0 - gamma) * reward + gamma * backup).max(axis=1)
        delta = float(np.max(np.abs(updated - values)))
        values = updated
        if trace is not None:
            trace.append(delta)
        if delta <= threshold:
            break
    backup = np.column_stack([kernel @ values for kernel in kernels])
    greedy = np.argmax((1.0 - gamma) * reward + gamma * backup, axis=1)
    return values, greedy


def optimal_value(q: QuotientMDP, tol: float = 1e-10, trace: Optional[List[float]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Itération sur les valeurs avec l'opérateur de Bellman optimal (1-γ).

    Args:
        q (QuotientMDP): MDP quotient
        tol (float): Arrêt quand ∥V_{t+1} - V_t∥∞ ≤ tol·(1-γ)/γ
        trace (list, optional): Reçoit les écarts successifs

    Returns:
        Tuple[np.ndarray, np.ndarray]: V* et la politique gloutonne (identifiants)
    """
    return _value_iteration(q.kernels, q.reward, q.gamma, tol, trace)


def greedy_table(q: QuotientMDP, greedy: np.ndarray) -> np.ndarray:
    """Politique déterministe par classe sous forme de table de probabilités."""
    table = np.zeros((q.n_classes, q.n_actions))
    table[np.arange(q.n_classes), greedy] = 1.0
    return table


def kl_regularized_argmax(q_values: Sequence[float], prev: Sequence[float], upsilon: float) -> np.ndarray:
    """
    Maximise ⟨q, π⟩ - υ·KL(π ∥ prev) sur le simplexe.

    La stationnarité donne π_i(λ) = prev_i·exp((q_i - λ)/υ - 1) ; le
    multiplicateur λ est la racine de log Σ_i π_i(λ) = 0, cherchée par
    brentq sur un intervalle élargi jusqu'à encadrement.
    """
    q_values = np.asarray(q_values, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if upsilon <= 0:
        raise ValueError("upsilon must be positive")
    if q_values.shape != prev.shape:
        raise ValueError("q_values and prev must have the same length")
    if np.any(prev <= 0):
        raise ValueError("prev must be strictly positive")
    log_prev = np.log(prev)

    def log_mass(lam: float) -> float:
        return float(logsumexp(log_prev + (q_values - lam) / upsilon - 1.0))

    low, high = float(q_values.min()) - upsilon, float(q_values.max())
    width = max(high - low, upsilon)
    while log_mass(low) < 0.0:
        low -= width
        width *= 2.0
    while log_mass(high) > 0.0:
        high += width
        width *= 2.0
    lam = brentq(log_mass, low, high, xtol=1e-15 * max(1.0, abs(high)), rtol=4 * np.finfo(float).eps, maxiter=500)
    solution = np.exp(log_prev + (q_values - lam) / upsilon - 1.0)
    if not np.all(np.isfinite(solution)):
        raise NonFiniteError("non-finite KL-regularized solution")
    # pas de renormalisation : λ seul doit placer π sur le simplexe
    mass_error = abs(float(solution.sum()) - 1.0)
    if mass_error > SIMPLEX_TOLERANCE:
        raise SolverError(f"dual root λ={lam:.6g} leaves |Σπ - 1| = {mass_error:.3e}")
    return solution


def class_policy(q: QuotientMDP, policy) -> np.ndarray:
    """Relève une politique (énergie ou gloutonne) en table par classe."""
    return np.vstack([policy.probabilities(q.representative(c)) for c in range(q.n_classes)])


def start_distribution(q: QuotientMDP, initial_dist: np.ndarray) -> np.ndarray:
    """Loi exacte de la classe initiale sous un tirage i.i.d. des N états."""
    initial = np.asarray(initial_dist, dtype=np.float64)
    weights = np.empty(q.n_classes)
    for i, (s0, multiset) in enumerate(q.classes):
        rest = np.bincount(np.asarray(multiset), minlength=q.n_states)
        rest[s0] -= 1
        others = multinomial_pmf(rest, initial)
        weights[i] = initial[s0] * others
    return weights


def lift_values(q: QuotientMDP, table: np.ndarray, obs: MfObservation) -> np.ndarray:
    """Valeur d'une table de classes sur une observation ordonnée."""
    return table[q.class_of(obs)]


@dataclass(frozen=True, eq=False)
class JointSolution:
    """Solution par force brute indexée par configuration ordonnée (ordre lexicographique)."""

    values: np.ndarray
    greedy: np.ndarray
    n_states: int
    n_agents: int

    def value_of(self, config: JointConfig) -> float:
        return float(self.values[np.ravel_multi_index(tuple(config), (self.n_states,) * self.n_agents)])


def joint_value_iteration(env: MeanFieldEnv, tol: float = 1e-12, trace: Optional[List[float]] = None) -> JointSolution:
    """
    Itération sur les valeurs sur le MDP joint non quotienté (S^N configurations).

    Sert à certifier que le quotient ne perd rien.
    """
    n_joint = env.n_states**env.n_agents
    if n_joint > JOINT_STATE_LIMIT:
        raise InstanceTooLargeError(f"|S|^N = {n_joint} > {JOINT_STATE_LIMIT}")
    configs = [JointConfig(states) for states in itertools.product(range(env.n_states), repeat=env.n_agents)]
    reward = np.empty((n_joint, env.n_actions))
    kernels = []
    for abar_id in range(env.n_actions):
        dense = np.empty((n_joint, n_joint))
        for row, config in enumerate(configs):
            counts = config.counts(env.n_states)
            reward[row, abar_id] = env.team_reward(counts, abar_id)
            joint = np.ones(1)
            for state in config:
                joint = np.outer(joint, env.local_probs(state, counts, abar_id)).ravel()
            dense[row] = joint
        kernels.append(sparse.csr_matrix(dense))
    values, greedy = _value_iteration(kernels, reward, env.gamma, tol, trace)
    return JointSolution(values=values, greedy=greedy, n_states=env.n_states, n_agents=env.n_agents)


def class_table_rows(q: QuotientMDP, columns: Dict[str, np.ndarray]) -> List[dict]:
    """Lignes CSV (classe, s0, multiensemble, colonnes par action) pour l'export."""
    rows = []
    for i, (s0, multiset) in enumerate(q.classes):
        row = {"class": i, "s0": s0, "multiset": " ".join(str(s) for s in multiset)}
        for name, table in columns.items():
            values = np.atleast_1d(table[i])
            if values.size == 1:
                row[name] = f"{float(values[0]):.12g}"
            else:
                row.update({f"{name}_{a}": f"{float(v):.12g}" for a, v in enumerate(values)})
        rows.append(row)
    return rows
