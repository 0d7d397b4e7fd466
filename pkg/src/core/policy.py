"""
Politiques à énergie - MF-PPO

Ce module gère les politiques π(ā|s, d_S) ∝ exp{τ⁻¹ F^A(s, d_S, ā)} sur
l'ensemble fini Ā :
- Distribution d'actions (softmax en espace logarithmique)
- Tirage d'actions déterministe étant donné le flux aléatoire
- Divergence KL et cible de régression de l'amélioration de politique

Functions:
- action_distribution(): Probabilités sur Ā
- sample_action(): Tirage catégoriel
- kl_divergence(): KL(p ∥ q)
- improvement_target(): τ_{k+1}·(F^Q/υ_k + F^A_k/τ_k)
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_softmax, rel_entr

from core.deepset_net import FeatureLayout, NetParams, net_forward_all
from core.errors import NonFiniteError, SupportError
from core.mf_core import MfObservation

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EnergyPolicy:
    """
    Politique à énergie de température τ.

    `actor=None` représente F^A ≡ 0, c'est-à-dire la politique uniforme π₀.
    """

    actor: Optional[NetParams]
    temperature: float
    action_set_size: int
    layout: FeatureLayout

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.layout.n_actions != self.action_set_size:
            raise ValueError("layout action count differs from |Ā|")

    @classmethod
    def uniform(cls, layout: FeatureLayout) -> "EnergyPolicy":
        return cls(actor=None, temperature=1.0, action_set_size=layout.n_actions, layout=layout)

    def energies(self, obs: MfObservation) -> np.ndarray:
        if self.actor is None:
            return np.zeros(self.action_set_size)
        return net_forward_all(self.actor, obs, self.layout)

    def probabilities(self, obs: MfObservation) -> np.ndarray:
        return action_distribution(self, obs)

    def sample(self, obs: MfObservation, rng: np.random.Generator) -> int:
        return sample_action(self, obs, self.layout, rng)


@dataclass(frozen=True, eq=False)
class GreedyPolicy:
    """argmax_ā F^A(s, s̄, ā), égalités vers le plus petit identifiant."""

    actor: Optional[NetParams]
    layout: FeatureLayout

    def probabilities(self, obs: MfObservation) -> np.ndarray:
        probs = np.zeros(self.layout.n_actions)
        probs[self.choose(obs)] = 1.0
        return probs

    def choose(self, obs: MfObservation) -> int:
        if self.actor is None:
            return 0
        return int(np.argmax(net_forward_all(self.actor, obs, self.layout)))

    def sample(self, obs: MfObservation, rng: np.random.Generator) -> int:
        return self.choose(obs)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Softmax stable (soustraction du maximum via log_softmax)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError(f"non-finite logits: {logits}")
    return np.exp(log_softmax(logits))


def action_distribution(
    policy: EnergyPolicy, obs: MfObservation, layout: Optional[FeatureLayout] = None
) -> np.ndarray:
    """
    Distribution π(·|s, d_S) sur Ā.

    Args:
        policy (EnergyPolicy): Acteur et température
        obs (MfObservation): Vue de l'agent marqué
        layout (FeatureLayout, optional): Par défaut celle de la politique

    Returns:
        np.ndarray: |Ā| probabilités, softmax de F^A/τ
    """
    if layout is not None and layout != policy.layout:
        policy = EnergyPolicy(policy.actor, policy.temperature, policy.action_set_size, layout)
    return softmax_probs(policy.energies(obs) / policy.temperature)


def draw_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(probs) - 1)


def sample_action(
    policy: EnergyPolicy, obs: MfObservation, layout: Optional[FeatureLayout], rng: np.random.Generator
) -> int:
    """Tirage catégoriel selon action_distribution (une seule consommation du rng)."""
    return draw_categorical(action_distribution(policy, obs, layout), rng)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Σ p log(p/q) ; erreur si q s'annule sur le support de p."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same shape")
    if np.any((p > 0) & (q <= 0)):
        raise SupportError("q vanishes where p is positive")
    return float(np.sum(rel_entr(p, q)))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def improvement_target(fq: float, fa_prev: float, upsilon_k: float, tau_k: float, tau_next: float) -> float:
    """Cible de régression τ_{k+1}·(F^Q/υ_k + F^A_k/τ_k)."""
    if min(upsilon_k, tau_k, tau_next) <= 0:
        raise ValueError("upsilon_k, tau_k and tau_next must be positive")
    return tau_next * (fq / upsilon_k + fa_prev / tau_k)


def improved_distribution(fq: np.ndarray, fa_prev: np.ndarray, upsilon_k: float, tau_k: float) -> np.ndarray:
    """Forme fermée π̄_{k+1} ∝ exp{F^Q/υ_k + F^A_k/τ_k}."""
    return softmax_probs(np.asarray(fq) / upsilon_k + np.asarray(fa_prev) / tau_k)
