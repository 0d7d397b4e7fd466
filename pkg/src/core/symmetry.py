"""
Symétries - MF-PPO

Ce module regroupe la machinerie de permutation :
- Permutations des agents et leur action sur les configurations
- Dénombrement des classes d'équivalence (taille de table invariante)
- Énumération exhaustive des classes (multiensembles canoniques)
- Audits empiriques d'invariance par permutation de la population

Functions:
- apply_permutation(): Réordonne une configuration
- count_invariant_table_size(): Taille de la table d'un acteur invariant
- enumerate_classes(): Représentants canoniques des classes
- audit_invariance(): Violation maximale d'invariance d'une fonction
"""

import itertools
import logging
from dataclasses import dataclass
from math import comb
from typing import Iterator, List, Tuple

import numpy as np

from core.errors import InstanceTooLargeError
from core.mf_core import JointConfig, MeanFieldEnv, MfObservation, ObservationFn, empirical_distribution

logger = logging.getLogger(__name__)

# Garde-fou d'énumération : |S|^N
ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True)
class Permutation:
    """Bijection κ sur {0, ..., N-1}."""

    mapping: Tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != list(range(len(mapping))):
            raise ValueError(f"{mapping} is not a permutation of 0..{len(mapping) - 1}")
        object.__setattr__(self, "mapping", mapping)

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, index: int) -> int:
        return self.mapping[index]

    def inverse(self) -> "Permutation":
        inverse = [0] * len(self.mapping)
        for i, j in enumerate(self.mapping):
            inverse[j] = i
        return Permutation(tuple(inverse))

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(rng.permutation(n)))


def apply_permutation(config: JointConfig, perm: Permutation) -> JointConfig:
    """output[i] = config[perm[i]]"""
    if len(config) != len(perm):
        raise ValueError(f"permutation of size {len(perm)} applied to configuration of size {len(config)}")
    return JointConfig(tuple(config[j] for j in perm.mapping))


def _check_positive(**values: int) -> None:
    for name, value in values.items():
        if int(value) != value or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")


def class_count(n_agents: int, s_card: int) -> int:
    """Nombre de multiensembles de taille N sur |S| symboles : Σ_k C(N-1,k-1)·C(|S|,k)."""
    _check_positive(n_agents=n_agents, s_card=s_card)
    return sum(comb(n_agents - 1, k - 1) * comb(s_card, k) for k in range(1, min(s_card, n_agents) + 1))


def count_invariant_table_size(n_agents: int, s_card: int, abar_card: int) -> int:
    """
    Taille de l'espace de recherche d'un acteur invariant par permutation.

    Args:
        n_agents (int): N
        s_card (int): |S|
        abar_card (int): |Ā|

    Returns:
        int: (Σ_{k=1}^{min(|S|,N)} C(N-1,k-1)·C(|S|,k))·|S|·|Ā|, entier exact
    """
    _check_positive(abar_card=abar_card)
    return class_count(n_agents, s_card) * s_card * abar_card


def iter_classes(n_agents: int, s_card: int) -> Iterator[Tuple[int, ...]]:
    _check_positive(n_agents=n_agents, s_card=s_card)
    return itertools.combinations_with_replacement(range(s_card), n_agents)


def enumerate_classes(n_agents: int, s_card: int) -> List[Tuple[int, ...]]:
    """Un représentant trié par classe de permutation (énumération exhaustive)."""
    _check_positive(n_agents=n_agents, s_card=s_card)
    if s_card**n_agents > ENUMERATION_LIMIT:
        raise InstanceTooLargeError(f"|S|^N = {s_card}^{n_agents} > {ENUMERATION_LIMIT:.0e}")
    return list(iter_classes(n_agents, s_card))


@dataclass(frozen=True)
class InvarianceReport:
    max_violation: float
    passed: bool
    trials: int


def audit_invariance(
    env: MeanFieldEnv,
    function_under_test: ObservationFn,
    trials: int,
    tolerance: float,
    rng: np.random.Generator,
) -> InvarianceReport:
    """
    Audit empirique d'invariance par permutation de la population.

    Tire des triplets (configuration, ā, κ) ; l'agent marqué suit la
    permutation, seul l'ordre des autres agents change.

    Returns:
        InvarianceReport: violation maximale |f(obs, ā) - f(κ(obs), ā)|
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    worst = 0.0
    for _ in range(trials):
        config = JointConfig(tuple(rng.integers(0, env.n_states, size=env.n_agents)))
        tagged = int(rng.integers(env.n_agents))
        abar_id = int(rng.integers(env.n_actions))
        perm = Permutation.random(env.n_agents, rng)
        permuted = apply_permutation(config, perm)
        moved = perm.inverse()[tagged]
        before = function_under_test(MfObservation.tagged(config, tagged), abar_id)
        after = function_under_test(MfObservation.tagged(permuted, moved), abar_id)
        worst = max(worst, abs(float(before) - float(after)))
    report = InvarianceReport(max_violation=worst, passed=worst <= tolerance, trials=trials)
    logger.debug("Audit d'invariance: %d essais, violation max %.3e", trials, worst)
    return report


def order_sensitive_score(obs: MfObservation, abar_id: int) -> float:
    """Sonde pondérée par la position : contrôle négatif des audits."""
    return float(sum((i + 1) * s for i, s in enumerate(obs.population)))


def counting_rows(max_agents: int = 6, max_states: int = 4) -> List[dict]:
    """Table (N, |S|, formule, énumération, accord) pour la CLI."""
    rows = []
    for n in range(1, max_agents + 1):
        for s in range(1, max_states + 1):
            formula = class_count(n, s)
            enumerated = len(enumerate_classes(n, s))
            rows.append({"N": n, "S": s, "formula": formula, "enumerated": enumerated, "agree": formula == enumerated})
    return rows


def polynomial_growth_holds(max_agents: int = 64, max_states: int = 3) -> bool:
    """class_count(N, |S|) ≤ (N+1)^|S| : croissance d'ordre N^|S|."""
    return all(
        class_count(n, s) <= (n + 1) ** s for n in range(1, max_agents + 1) for s in range(1, max_states + 1)
    )


def histogram_preserved(config: JointConfig, perm: Permutation, n_states: int) -> bool:
    before = empirical_distribution(config, n_states).mass
    after = empirical_distribution(apply_permutation(config, perm), n_states).mass
    return bool(np.array_equal(before, after))
