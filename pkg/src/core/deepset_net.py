"""
Réseaux DeepSet - MF-PPO

Ce module implémente les réseaux acteur/critique à deux couches ReLU :
- Encodage des features (s, s', ā) de norme 1 (trois blocs one-hot / √3)
- Initialisation u_j ~ Unif{-1,+1}, α_{0,j} ~ N(0, I_d/d)
- Évaluation exacte F(s, s̄, ā) = 1/(√m·N) Σ_j Σ_{s'∈s̄} u_j σ(α_jᵀ(s, s', ā))
- Gradient fermé, projection sur la boule B(α₀, R)
- Réseau linéarisé F⁰ (portes figées à l'initialisation)
- Perceptron de référence (MLP) à nombre de paramètres apparié, sensible à l'ordre

Functions:
- encode_features(): Vecteur de features d'un triplet (s, s', ā)
- init_params(): Tirage initial des paramètres
- forward() / forward_linearized(): Évaluation du réseau
- grad_alpha(): Gradient par rapport à la première couche
- project_ball(): Projection radiale sur la boule de confiance
- mlp_forward() / mlp_grad(): Réseau de référence
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from core.errors import DimensionMismatchError
from core.mf_core import JointConfig, MfObservation

logger = logging.getLogger(__name__)

FEATURE_SCALE = 1.0 / math.sqrt(3.0)


@dataclass(frozen=True)
class FeatureLayout:
    """Disposition des blocs one-hot [s | s' | id de ā dans Ā]."""

    n_states: int
    n_actions: int

    @property
    def dim(self) -> int:
        return 2 * self.n_states + self.n_actions

    @classmethod
    def for_env(cls, env) -> "FeatureLayout":
        return cls(n_states=env.n_states, n_actions=env.n_actions)

    def _check(self, state: int, action: int) -> None:
        if not 0 <= state < self.n_states:
            raise IndexError(f"state id {state} outside [0, {self.n_states})")
        if not 0 <= action < self.n_actions:
            raise IndexError(f"action id {action} outside [0, {self.n_actions})")

    def population_block(self, obs: MfObservation) -> np.ndarray:
        """Features (N, d) sans le bloc d'action."""
        population = np.asarray(obs.population.states, dtype=np.int64)
        if population.min() < 0 or population.max() >= self.n_states:
            raise IndexError(f"population states outside [0, {self.n_states})")
        self._check(obs.self_state, 0)
        block = np.zeros((len(population), self.dim))
        block[:, obs.self_state] = FEATURE_SCALE
        block[np.arange(len(population)), self.n_states + population] = FEATURE_SCALE
        return block

    def features(self, obs: MfObservation, abar_id: int) -> np.ndarray:
        self._check(obs.self_state, abar_id)
        block = self.population_block(obs)
        block[:, 2 * self.n_states + abar_id] = FEATURE_SCALE
        return block

    def all_action_features(self, obs: MfObservation) -> np.ndarray:
        """Features (|Ā|, N, d) pour toutes les actions."""
        block = self.population_block(obs)
        stacked = np.repeat(block[None, :, :], self.n_actions, axis=0)
        stacked[np.arange(self.n_actions), :, 2 * self.n_states + np.arange(self.n_actions)] = FEATURE_SCALE
        return stacked


def encode_features(s: int, s_prime: int, abar_id: int, layout: FeatureLayout) -> np.ndarray:
    """
    Encode (s, s', ā) en trois blocs one-hot mis à l'échelle 1/√3.

    Returns:
        np.ndarray: Vecteur de dimension 2|S| + |Ā| et de norme exactement 1
    """
    layout._check(s, abar_id)
    layout._check(s_prime, 0)
    vector = np.zeros(layout.dim)
    vector[s] = FEATURE_SCALE
    vector[layout.n_states + s_prime] = FEATURE_SCALE
    vector[2 * layout.n_states + abar_id] = FEATURE_SCALE
    return vector


@dataclass(frozen=True, eq=False)
class DeepSetParams:
    """
    Paramètres d'un réseau à deux couches : signes u figés, première couche
    α entraînable, instantané α₀ de l'initialisation et rayon R.
    """

    u: np.ndarray
    alpha: np.ndarray
    alpha0: np.ndarray
    radius: float

    def __post_init__(self):
        if self.alpha.shape != self.alpha0.shape or self.alpha.shape[0] != self.u.shape[0]:
            raise DimensionMismatchError("u, alpha and alpha0 shapes disagree")
        if self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def m(self) -> int:
        return self.alpha.shape[0]

    @property
    def d(self) -> int:
        return self.alpha.shape[1]

    def with_alpha(self, alpha: np.ndarray):
        return replace(self, alpha=np.array(alpha, dtype=np.float64))

    def displacement(self) -> float:
        """∥α - α₀∥₂"""
        return float(np.linalg.norm(self.alpha - self.alpha0))

    def count_params(self) -> int:
        return int(self.alpha.size)


@dataclass(frozen=True, eq=False)
class MlpParams(DeepSetParams):
    """Même famille d'initialisation, entrée concaténée (sensible à l'ordre)."""


NetParams = Union[DeepSetParams, MlpParams]


def _draw(m: int, d: int, rng: np.random.Generator, centered: bool = False):
    if m < 1 or d < 1:
        raise ValueError("width and dimension must be >= 1")
    if not centered:
        u = rng.choice(np.array([-1.0, 1.0]), size=m)
        alpha0 = rng.standard_normal((m, d)) / math.sqrt(d)
        return u, alpha0
    # unités appariées (u, α₀) et (-u, α₀) : F⁰ ≡ 0 pour m pair
    half = (m + 1) // 2
    u = rng.choice(np.array([-1.0, 1.0]), size=half)
    alpha0 = rng.standard_normal((half, d)) / math.sqrt(d)
    return np.concatenate([u, -u])[:m], np.concatenate([alpha0, alpha0])[:m]


def init_params(m: int, d: int, radius: float, rng: np.random.Generator, centered: bool = False) -> DeepSetParams:
    """
    u_j ~ Unif{-1,+1}, α_{0,j} ~ N(0, I_d/d), α = α₀.

    Avec `centered=True`, la seconde moitié des unités reprend les α₀ de la
    première avec le signe de u inversé : les lois marginales sont
    inchangées et le réseau initial est identiquement nul.
    """
    u, alpha0 = _draw(m, d, rng, centered)
    return DeepSetParams(u=u, alpha=alpha0.copy(), alpha0=alpha0, radius=float(radius))


def init_mlp_params(m: int, d: int, radius: float, rng: np.random.Generator, centered: bool = False) -> MlpParams:
    u, alpha0 = _draw(m, d, rng, centered)
    return MlpParams(u=u, alpha=alpha0.copy(), alpha0=alpha0, radius=float(radius))


def _check_dims(params: DeepSetParams, dim: int) -> None:
    if params.d != dim:
        raise DimensionMismatchError(f"parameters expect d={params.d}, layout gives d={dim}")


def forward(params: DeepSetParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> float:
    """Évaluation exacte de la double somme, moyenne sur la population."""
    _check_dims(params, layout.dim)
    features = layout.features(obs, abar_id)
    hidden = np.maximum(features @ params.alpha.T, 0.0)
    return float((hidden @ params.u).sum() / (math.sqrt(params.m) * features.shape[0]))


def forward_all_actions(params: DeepSetParams, obs: MfObservation, layout: FeatureLayout) -> np.ndarray:
    """F(s, s̄, ā) pour tout ā ∈ Ā, en un seul produit matriciel."""
    _check_dims(params, layout.dim)
    features = layout.all_action_features(obs)
    hidden = np.maximum(features @ params.alpha.T, 0.0)
    return (hidden @ params.u).sum(axis=1) / (math.sqrt(params.m) * features.shape[1])


def forward_linearized(params: DeepSetParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> float:
    """F⁰ : mêmes sommes, portes ReLU calculées à partir de α₀."""
    _check_dims(params, layout.dim)
    features = layout.features(obs, abar_id)
    gates = (features @ params.alpha0.T) > 0.0
    linear = np.where(gates, features @ params.alpha.T, 0.0)
    return float((linear @ params.u).sum() / (math.sqrt(params.m) * features.shape[0]))


def grad_alpha(params: DeepSetParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> np.ndarray:
    """
    Gradient fermé ∇_α F, ligne j = u_j/(√m·N) Σ_{s'} 𝟙{α_jᵀx > 0}·x.

    La porte est stricte : sous-gradient nul au point anguleux.
    """
    _check_dims(params, layout.dim)
    features = layout.features(obs, abar_id)
    gates = ((features @ params.alpha.T) > 0.0).astype(np.float64)
    scale = params.u / (math.sqrt(params.m) * features.shape[0])
    return scale[:, None] * (gates.T @ features)


def project_ball(params: DeepSetParams) -> DeepSetParams:
    """Projection radiale de α sur B(α₀, R) ; identité à l'intérieur."""
    offset = params.alpha - params.alpha0
    norm = float(np.linalg.norm(offset))
    if norm <= params.radius:
        return params
    return params.with_alpha(params.alpha0 + offset * (params.radius / norm))


# Réseau de référence pour l'ablation du critique

def mlp_input_dim(layout: FeatureLayout, n_agents: int) -> int:
    return (n_agents + 1) * layout.n_states + layout.n_actions


def mlp_inputs(obs: MfObservation, layout: FeatureLayout) -> np.ndarray:
    """Entrées (|Ā|, d_mlp) : [s | s_0 | ... | s_{N-1} | ā] / √(N+2)."""
    n_agents = len(obs.population)
    n_states = layout.n_states
    layout._check(obs.self_state, 0)
    scale = 1.0 / math.sqrt(n_agents + 2)
    inputs = np.zeros((layout.n_actions, mlp_input_dim(layout, n_agents)))
    inputs[:, obs.self_state] = scale
    for i, state in enumerate(obs.population):
        if not 0 <= state < n_states:
            raise IndexError(f"state id {state} outside [0, {n_states})")
        inputs[:, (i + 1) * n_states + state] = scale
    offset = (n_agents + 1) * n_states
    inputs[np.arange(layout.n_actions), offset + np.arange(layout.n_actions)] = scale
    return inputs


def _mlp_input(params: MlpParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> np.ndarray:
    layout._check(obs.self_state, abar_id)
    inputs = mlp_inputs(obs, layout)
    _check_dims(params, inputs.shape[1])
    return inputs[abar_id]


def mlp_forward(params: MlpParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> float:
    x = _mlp_input(params, obs, abar_id, layout)
    return float(params.u @ np.maximum(params.alpha @ x, 0.0) / math.sqrt(params.m))


def mlp_forward_all_actions(params: MlpParams, obs: MfObservation, layout: FeatureLayout) -> np.ndarray:
    inputs = mlp_inputs(obs, layout)
    _check_dims(params, inputs.shape[1])
    return np.maximum(inputs @ params.alpha.T, 0.0) @ params.u / math.sqrt(params.m)


def mlp_grad(params: MlpParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> np.ndarray:
    x = _mlp_input(params, obs, abar_id, layout)
    gates = (params.alpha @ x > 0.0).astype(np.float64)
    return ((params.u * gates) / math.sqrt(params.m))[:, None] * x[None, :]


def matched_mlp_width(m: int, layout: FeatureLayout, n_agents: int) -> int:
    """Largeur du MLP donnant le même nombre de paramètres entraînables que le DeepSet."""
    return max(1, round(m * layout.dim / mlp_input_dim(layout, n_agents)))


# Répartition selon l'architecture

def net_forward(params: NetParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> float:
    if isinstance(params, MlpParams):
        return mlp_forward(params, obs, abar_id, layout)
    return forward(params, obs, abar_id, layout)


def net_forward_all(params: NetParams, obs: MfObservation, layout: FeatureLayout) -> np.ndarray:
    if isinstance(params, MlpParams):
        return mlp_forward_all_actions(params, obs, layout)
    return forward_all_actions(params, obs, layout)


def net_grad(params: NetParams, obs: MfObservation, abar_id: int, layout: FeatureLayout) -> np.ndarray:
    if isinstance(params, MlpParams):
        return mlp_grad(params, obs, abar_id, layout)
    return grad_alpha(params, obs, abar_id, layout)


def random_observation(layout: FeatureLayout, n_agents: int, rng: np.random.Generator) -> MfObservation:
    config = JointConfig(tuple(rng.integers(0, layout.n_states, size=n_agents)))
    return MfObservation.tagged(config, int(rng.integers(n_agents)))


def linearization_gap(
    m: int, layout: FeatureLayout, n_agents: int, radius: float, n_inputs: int, rng: np.random.Generator
) -> float:
    """
    Écart quadratique moyen |F - F⁰|² pour ∥α - α₀∥ = R fixé.

    Le déplacement est tiré uniformément sur la sphère de rayon R.
    """
    params = init_params(m, layout.dim, radius, rng)
    direction = rng.standard_normal(params.alpha.shape)
    direction *= radius / np.linalg.norm(direction)
    moved = params.with_alpha(params.alpha0 + direction)
    gaps = np.empty(n_inputs)
    for i in range(n_inputs):
        obs = random_observation(layout, n_agents, rng)
        abar_id = int(rng.integers(layout.n_actions))
        gaps[i] = forward(moved, obs, abar_id, layout) - forward_linearized(moved, obs, abar_id, layout)
    return float(np.mean(gaps**2))
