"""
Entraînement MF-PPO

Ce module implémente la boucle d'optimisation complète :
- Échantillonneurs des distributions σ_k = ν_k π_k et σ̃_k = ν_k π₀
- Évaluation de politique par TD semi-gradient projeté (moyenne ergodique)
- Amélioration de politique par SGD projeté sur la cible proximale
- Boucle externe avec calendrier τ_{k+1} = υ√K/(k+1), υ_k = υ√K
- Évaluation des retours avec intervalle de confiance à 95 %

Functions:
- sample_stationary() / sample_improvement_dist(): Tirage d'une transition
- td_policy_evaluation(): Critique F^Q par TD
- sgd_policy_improvement(): Acteur F^A par régression
- mf_ppo(): Boucle externe complète
- evaluate_returns(): Moyenne et IC des retours actualisés
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy import stats

from core.config import TrainSchedule, get_pool_size
from core.deepset_net import (
    DeepSetParams,
    FeatureLayout,
    NetParams,
    init_mlp_params,
    init_params,
    matched_mlp_width,
    mlp_input_dim,
    net_forward,
    net_grad,
)
from core.errors import NonFiniteError
from core.mf_core import (
    ActingPolicy,
    JointConfig,
    MeanFieldEnv,
    MfObservation,
    Transition,
    discounted_returns,
    env_step,
)
from core.policy import EnergyPolicy, GreedyPolicy, action_distribution, improvement_target, kl_divergence
from utils.utils import child_seed, spawn_streams

logger = logging.getLogger(__name__)

__all__ = [
    "TrainSchedule",
    "IterationRecord",
    "TrainingResult",
    "EvalSummary",
    "sample_stationary",
    "sample_improvement_dist",
    "generate_samples",
    "td_policy_evaluation",
    "sgd_policy_improvement",
    "mf_ppo",
    "greedy_policy",
    "estimate_value",
    "evaluate_returns",
]

METRIC_COLUMNS = ["k", "td_loss", "improvement_loss", "est_value", "kl_to_prev", "tau_k", "upsilon_k", "wallclock_ms"]

# Rappel par pas interne : (t, paramètres projetés, perte du pas, transition)
InnerTrace = Callable[[int, NetParams, float, Transition], None]


@dataclass(frozen=True)
class IterationRecord:
    k: int
    td_loss: float
    improvement_loss: float
    est_value: float
    kl_to_prev: float
    tau_k: float
    upsilon_k: float
    wallclock_ms: float

    def as_row(self) -> dict:
        """Ligne CSV ; valeurs formatées de façon stable."""
        return {
            "k": self.k,
            "td_loss": f"{self.td_loss:.12g}",
            "improvement_loss": f"{self.improvement_loss:.12g}",
            "est_value": f"{self.est_value:.12g}",
            "kl_to_prev": f"{self.kl_to_prev:.12g}",
            "tau_k": f"{self.tau_k:.12g}",
            "upsilon_k": f"{self.upsilon_k:.12g}",
            "wallclock_ms": f"{self.wallclock_ms:.3f}",
        }


@dataclass(eq=False)
class TrainingResult:
    records: List[IterationRecord]
    actor: NetParams
    critic: NetParams
    policy: EnergyPolicy
    layout: FeatureLayout
    env_steps: int = 0

    @property
    def final_value(self) -> float:
        return self.records[-1].est_value if self.records else float("nan")


@dataclass(frozen=True)
class EvalSummary:
    mean: float
    half_width: float
    episodes: int
    returns: np.ndarray = field(repr=False)

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width


# Échantillonnage

def _start_chain(env: MeanFieldEnv, policy: ActingPolicy, burn_in: int, rng: np.random.Generator):
    """Réinitialise, marque un agent au hasard et déroule burn_in pas sous la politique."""
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    config = env.reset(rng)
    tagged = int(rng.integers(env.n_agents))
    for _ in range(burn_in):
        obs = MfObservation.tagged(config, tagged)
        config, _ = env_step(env, config, policy.sample(obs, rng), rng)
    return config, tagged


def _emit(
    env: MeanFieldEnv, policy: ActingPolicy, config: JointConfig, tagged: int, action_id: int, rng: np.random.Generator
) -> Transition:
    obs = MfObservation.tagged(config, tagged)
    next_config, reward = env_step(env, config, action_id, rng)
    next_obs = MfObservation.tagged(next_config, tagged)
    return Transition(obs, action_id, reward, next_obs, policy.sample(next_obs, rng))


def sample_stationary(env: MeanFieldEnv, policy: ActingPolicy, burn_in: int, rng: np.random.Generator) -> Transition:
    """
    Une transition (obs, ā, r, obs', ā') approximativement sous σ_k.

    La chaîne part d'une réinitialisation, l'agent marqué est tiré
    uniformément, puis burn_in pas sont joués avant l'émission.
    """
    config, tagged = _start_chain(env, policy, burn_in, rng)
    action_id = policy.sample(MfObservation.tagged(config, tagged), rng)
    return _emit(env, policy, config, tagged, action_id, rng)


def sample_improvement_dist(env: MeanFieldEnv, policy: ActingPolicy, burn_in: int, rng: np.random.Generator) -> Transition:
    """Comme sample_stationary, avec l'action enregistrée tirée uniformément sur Ā (σ̃_k)."""
    config, tagged = _start_chain(env, policy, burn_in, rng)
    return _emit(env, policy, config, tagged, int(rng.integers(env.n_actions)), rng)


def _chain_samples(
    env: MeanFieldEnv, policy: ActingPolicy, count: int, burn_in: int, uniform: bool, rng: np.random.Generator
) -> List[Transition]:
    config, tagged = _start_chain(env, policy, burn_in, rng)
    action_id = policy.sample(MfObservation.tagged(config, tagged), rng)
    samples = []
    for _ in range(count):
        if uniform:
            samples.append(_emit(env, policy, config, tagged, int(rng.integers(env.n_actions)), rng))
            # la chaîne continue sous π_k
            config, _ = env_step(env, config, action_id, rng)
            action_id = policy.sample(MfObservation.tagged(config, tagged), rng)
        else:
            transition = _emit(env, policy, config, tagged, action_id, rng)
            samples.append(transition)
            config, action_id = transition.next_obs.population, transition.next_action_id
    return samples


def generate_samples(
    env: MeanFieldEnv,
    policy: ActingPolicy,
    count: int,
    burn_in: int,
    mode: str,
    rng: np.random.Generator,
    uniform: bool = False,
) -> List[Transition]:
    """
    Pré-génère les échantillons d'une boucle interne, dans l'ordre de consommation.

    Mode `restart` : un flux dérivé par échantillon, génération sur le pool
    de threads ; le résultat ne dépend pas du nombre de threads.
    Mode `chain` : une seule chaîne après burn-in, transitions consécutives.
    """
    if mode == "chain":
        return _chain_samples(env, policy, count, burn_in, uniform, rng)
    if mode != "restart":
        raise ValueError(f"unknown sampling mode {mode!r}")
    sampler = sample_improvement_dist if uniform else sample_stationary
    streams = spawn_streams(child_seed(rng), count)
    pool_size = get_pool_size()
    if pool_size == 1:
        return [sampler(env, policy, burn_in, stream) for stream in streams]
    with ThreadPoolExecutor(max_workers=pool_size) as executor:
        return list(executor.map(lambda stream: sampler(env, policy, burn_in, stream), streams))


# Boucles internes

def _projected_step(params: NetParams, gradient: np.ndarray, scale: float, eta: float) -> NetParams:
    alpha = params.alpha - eta * scale * gradient
    offset = alpha - params.alpha0
    norm = float(np.linalg.norm(offset))
    if norm > params.radius:
        alpha = params.alpha0 + offset * (params.radius / norm)
    return params.with_alpha(alpha)


def td_policy_evaluation(
    env: MeanFieldEnv,
    policy_k: EnergyPolicy,
    critic: NetParams,
    schedule: TrainSchedule,
    rng: np.random.Generator,
    trace: Optional[InnerTrace] = None,
    samples: Optional[List[Transition]] = None,
) -> NetParams:
    """
    Évaluation de politique par TD semi-gradient projeté.

    θ(t+1/2) = θ(t) - η·δ_t·∇F^Q (η = schedule.step), δ_t = F^Q(s, s̄, ā) - (1-γ)r - γF^Q(s, s̄', ā'),
    puis projection sur B(θ₀, R_Q). La sortie est la moyenne de θ(0..T-1).

    Args:
        env (MeanFieldEnv): Environnement
        policy_k (EnergyPolicy): Politique évaluée (échantillons et ā')
        critic (NetParams): Point de départ (DeepSet ou MLP)
        schedule (TrainSchedule): T, pas effectif, γ, burn-in
        rng (np.random.Generator): Flux aléatoire
        trace (InnerTrace, optional): Rappel à chaque pas
        samples (list, optional): Échantillons imposés (sinon tirés selon schedule.sampling)

    Returns:
        NetParams: Paramètres moyennés ergodiquement
    """
    gamma = schedule.resolved_gamma(env.gamma)
    layout = policy_k.layout
    if samples is None:
        samples = generate_samples(
            env, policy_k, schedule.T, schedule.resolved_burn_in(gamma), schedule.sampling, rng
        )
    eta = schedule.step
    params = critic
    total = np.zeros_like(critic.alpha)
    for t, transition in enumerate(samples):
        total += params.alpha
        value = net_forward(params, transition.obs, transition.action_id, layout)
        next_value = net_forward(params, transition.next_obs, transition.next_action_id, layout)
        delta = value - (1.0 - gamma) * transition.reward - gamma * next_value
        if not math.isfinite(delta):
            raise NonFiniteError(f"non-finite TD error at step {t} (F^Q={value}, F^Q'={next_value})")
        gradient = net_grad(params, transition.obs, transition.action_id, layout)
        params = _projected_step(params, gradient, delta, eta)
        if trace is not None:
            trace(t, params, delta * delta, transition)
    return params.with_alpha(total / len(samples))


def sgd_policy_improvement(
    env: MeanFieldEnv,
    policy_k: EnergyPolicy,
    critic_k: NetParams,
    actor: NetParams,
    schedule: TrainSchedule,
    k: int,
    rng: np.random.Generator,
    trace: Optional[InnerTrace] = None,
    samples: Optional[List[Transition]] = None,
) -> NetParams:
    """
    Amélioration de politique par SGD projeté.

    Régresse F^A sur τ_{k+1}·(F^Q_k/υ_k + F^A_k/τ_k) avec des échantillons
    de σ̃_k ; `policy_k.actor` joue le rôle de F^A_k (None : F^A_k ≡ 0).
    """
    if not 0 <= k < schedule.K:
        raise ValueError(f"iteration k={k} outside [0, {schedule.K})")
    gamma = schedule.resolved_gamma(env.gamma)
    layout = policy_k.layout
    if samples is None:
        samples = generate_samples(
            env, policy_k, schedule.T, schedule.resolved_burn_in(gamma), schedule.sampling, rng, uniform=True
        )
    tau_k, tau_next, upsilon_k = policy_k.temperature, schedule.tau(k + 1), schedule.upsilon_k
    eta = schedule.step
    params = actor
    total = np.zeros_like(actor.alpha)
    for t, transition in enumerate(samples):
        total += params.alpha
        obs, action_id = transition.obs, transition.action_id
        fq = net_forward(critic_k, obs, action_id, layout)
        fa_prev = 0.0 if policy_k.actor is None else net_forward(policy_k.actor, obs, action_id, layout)
        residual = net_forward(params, obs, action_id, layout) - improvement_target(
            fq, fa_prev, upsilon_k, tau_k, tau_next
        )
        if not math.isfinite(residual):
            raise NonFiniteError(f"non-finite improvement residual at step {t} (k={k})")
        params = _projected_step(params, net_grad(params, obs, action_id, layout), residual, eta)
        if trace is not None:
            trace(t, params, residual * residual, transition)
    return params.with_alpha(total / len(samples))


# Boucle externe

def _init_networks(env: MeanFieldEnv, schedule: TrainSchedule, layout: FeatureLayout, rng: np.random.Generator):
    actor = init_params(schedule.m_actor, layout.dim, schedule.radius_actor, rng, schedule.centered_init)
    if schedule.critic_arch == "mlp":
        width = matched_mlp_width(schedule.m_critic, layout, env.n_agents)
        critic = init_mlp_params(
            width, mlp_input_dim(layout, env.n_agents), schedule.radius_critic, rng, schedule.centered_init
        )
    elif schedule.m_critic == schedule.m_actor:
        # initialisation partagée entre acteur et critique
        critic = DeepSetParams(
            u=actor.u, alpha=actor.alpha0.copy(), alpha0=actor.alpha0, radius=schedule.radius_critic
        )
    else:
        critic = init_params(schedule.m_critic, layout.dim, schedule.radius_critic, rng, schedule.centered_init)
    return actor, critic


def estimate_value(
    env: MeanFieldEnv,
    policy: ActingPolicy,
    gamma: float,
    episodes: int,
    horizon: Optional[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Retours actualisés depuis des réinitialisations (agent marqué tiré au hasard)."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = np.empty(episodes)
    for episode in range(episodes):
        start = MfObservation.tagged(env.reset(rng), int(rng.integers(env.n_agents)))
        returns[episode] = discounted_returns(env, policy, start, gamma, 1, horizon, rng)[0]
    return returns


def _mean_kl(new: EnergyPolicy, old: EnergyPolicy, observations: List[MfObservation]) -> float:
    if not observations:
        return 0.0
    return float(
        np.mean([kl_divergence(action_distribution(new, obs), action_distribution(old, obs)) for obs in observations])
    )


def mf_ppo(
    env: MeanFieldEnv,
    schedule: TrainSchedule,
    callback: Optional[Callable[[IterationRecord, NetParams, NetParams], None]] = None,
) -> TrainingResult:
    """
    Boucle externe de MF-PPO.

    π₀ est uniforme (F^A ≡ 0, τ₀ = 1). À chaque itération k : évaluation
    TD de π_k, amélioration SGD, puis π_{k+1} ∝ exp{F^A_{k+1}/τ_{k+1}}.

    Args:
        env (MeanFieldEnv): Environnement
        schedule (TrainSchedule): Calendrier et graine
        callback: Appelé après chaque itération avec (record, acteur, critique)

    Returns:
        TrainingResult: K enregistrements et réseaux finaux
    """
    gamma = schedule.resolved_gamma(env.gamma)
    layout = FeatureLayout.for_env(env)
    init_stream, *iteration_streams = spawn_streams(schedule.seed, schedule.K + 1)
    actor, critic = _init_networks(env, schedule, layout, init_stream)
    policy = EnergyPolicy.uniform(layout)
    burn_in = schedule.resolved_burn_in(gamma)
    records: List[IterationRecord] = []
    env_steps = 0
    start_time = time.time()
    logger.info(
        "🚀 MF-PPO sur %s : K=%d, T=%d, pas=%.3g, υ=%.3g, m_A=%d, m_Q=%d (%s), burn-in=%d",
        env.name,
        schedule.K,
        schedule.T,
        schedule.step,
        schedule.upsilon,
        schedule.m_actor,
        schedule.m_critic,
        schedule.critic_arch,
        burn_in,
    )
    for k in range(schedule.K):
        iteration_start = time.time()
        td_stream, improve_stream, value_stream = spawn_streams(child_seed(iteration_streams[k]), 3)
        if schedule.reinit_each_iteration and k > 0:
            actor, critic = _init_networks(env, schedule, layout, iteration_streams[k])

        td_losses: List[float] = []
        critic = td_policy_evaluation(
            env, policy, critic, schedule, td_stream, trace=lambda t, p, loss, tr: td_losses.append(loss)
        )
        improvement_losses: List[float] = []
        observations: List[MfObservation] = []

        def record_improvement(t: int, params: NetParams, loss: float, transition: Transition) -> None:
            improvement_losses.append(loss)
            observations.append(transition.obs)

        actor = sgd_policy_improvement(
            env, policy, critic, actor, schedule, k, improve_stream, trace=record_improvement
        )
        next_policy = EnergyPolicy(actor, schedule.tau(k + 1), env.n_actions, layout)
        kl_to_prev = _mean_kl(next_policy, policy, observations)
        policy = next_policy
        est_value = float(
            estimate_value(env, policy, gamma, schedule.eval_episodes, schedule.eval_horizon, value_stream).mean()
        )
        td_loss, improvement_loss = float(np.mean(td_losses)), float(np.mean(improvement_losses))
        if not all(math.isfinite(v) for v in (td_loss, improvement_loss, est_value, kl_to_prev)):
            raise NonFiniteError(
                f"non-finite metrics at iteration {k}: td_loss={td_loss}, improvement_loss={improvement_loss}, "
                f"est_value={est_value}, kl_to_prev={kl_to_prev}"
            )
        chain_steps = 2 * schedule.T + 2 * burn_in if schedule.sampling == "chain" else 2 * schedule.T * (burn_in + 1)
        env_steps += chain_steps
        elapsed_ms = (time.time() - iteration_start) * 1000.0
        record = IterationRecord(
            k=k,
            td_loss=td_loss,
            improvement_loss=improvement_loss,
            est_value=est_value,
            kl_to_prev=kl_to_prev,
            tau_k=schedule.tau(k + 1),
            upsilon_k=schedule.upsilon_k,
            wallclock_ms=elapsed_ms,
        )
        records.append(record)
        logger.info(
            "⏱️  itération %d/%d: td=%.4g, amélioration=%.4g, V̂=%.4f, KL=%.3g en %.0f ms",
            k + 1,
            schedule.K,
            td_loss,
            improvement_loss,
            est_value,
            kl_to_prev,
            elapsed_ms,
        )
        if callback is not None:
            callback(record, actor, critic)
    logger.info("✅ MF-PPO terminé en %.2fs", time.time() - start_time)
    return TrainingResult(records=records, actor=actor, critic=critic, policy=policy, layout=layout, env_steps=env_steps)


# Évaluation

def greedy_policy(actor: Optional[NetParams], layout: FeatureLayout) -> GreedyPolicy:
    """argmax_ā F^A, égalités vers le plus petit identifiant."""
    return GreedyPolicy(actor, layout)


def evaluate_returns(
    env: MeanFieldEnv,
    policy: ActingPolicy,
    episodes: int,
    rng: np.random.Generator,
    gamma: Optional[float] = None,
    horizon: Optional[int] = None,
) -> EvalSummary:
    """
    Moyenne des retours actualisés et demi-largeur de l'IC à 95 % (loi de Student).

    Args:
        env (MeanFieldEnv): Environnement
        policy (ActingPolicy): Politique jouée
        episodes (int): Nombre d'épisodes (≥ 1)
        rng (np.random.Generator): Flux aléatoire
        gamma (float, optional): Par défaut celui de l'environnement
        horizon (int, optional): Par défaut γ^h ≤ 1e-6

    Returns:
        EvalSummary: mean, half_width (nan si un seul épisode)
    """
    returns = estimate_value(env, policy, env.gamma if gamma is None else gamma, episodes, horizon, rng)
    mean = float(returns.mean())
    if episodes < 2:
        return EvalSummary(mean=mean, half_width=float("nan"), episodes=episodes, returns=returns)
    sem = float(stats.sem(returns))
    half_width = float(stats.t.ppf(0.975, episodes - 1) * sem)
    return EvalSummary(mean=mean, half_width=half_width, episodes=episodes, returns=returns)
