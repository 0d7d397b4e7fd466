"""
Suites de vérification - MF-PPO

Ce module regroupe les vérifications exécutées par `main.py check` :
- invariance : audits de permutation (DeepSet, MLP en contrôle négatif, Q exacte relevée)
- gradients : différences finies centrées contre le gradient fermé
- counting : formule de dénombrement des classes contre énumération
- prop4 : solveur numérique KL-régularisé contre la forme fermée
- td-oracle : critique TD contre Q^π exacte du MDP quotient
- linearization : écart |F - F⁰|² en fonction de la largeur

Chaque suite renvoie un SuiteReport (lignes CSV + verdict) et ne modifie
aucun état d'entraînement.

Functions:
- run_suite(): Exécute une suite par son nom
- run_all(): Exécute toutes les suites
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from core.config import TrainSchedule
from core.deepset_net import (
    FeatureLayout,
    forward,
    grad_alpha,
    init_mlp_params,
    init_params,
    linearization_gap,
    mlp_forward,
    mlp_grad,
    mlp_input_dim,
    mlp_inputs,
    random_observation,
)
from core.errors import SolverError
from core.mf_core import LocalActionMap, MeanFieldEnv, TableReward, identity_kernel, make_tabular_env
from core.oracle import (
    build_quotient,
    class_policy,
    exact_q,
    kl_regularized_argmax,
    lift_values,
    optimal_value,
    policy_kernel,
    policy_value,
    start_distribution,
)
from core.policy import (
    EnergyPolicy,
    GreedyPolicy,
    improved_distribution,
    improvement_target,
    softmax_probs,
    total_variation,
)
from core.symmetry import audit_invariance, counting_rows, polynomial_growth_holds
from core.trainer import td_policy_evaluation

logger = logging.getLogger(__name__)

SUITES = ("invariance", "gradients", "counting", "prop4", "td-oracle", "linearization")


@dataclass
class SuiteReport:
    name: str
    passed: bool
    rows: List[dict] = field(default_factory=list)
    summary: str = ""
    seconds: float = 0.0


def tabular_instance(gamma: float = 0.9, n_agents: int = 4) -> MeanFieldEnv:
    """
    Instance tabulaire |S|=3, |Ā|=2 des vérifications par oracle.

    Action 0 : reste avec probabilité 0.8 ; action 1 : avance avec probabilité 0.7.
    Récompenses dans [-1, 0], l'état 0 est la cible.
    """
    stay = np.array([[0.8, 0.2, 0.0], [0.0, 0.8, 0.2], [0.2, 0.0, 0.8]])
    move = np.array([[0.3, 0.7, 0.0], [0.0, 0.3, 0.7], [0.7, 0.0, 0.3]])
    kernel = np.stack([stay, move], axis=1)
    reward = TableReward(np.array([[0.0, -0.2], [-1.0, -0.8], [-0.5, -0.6]]))
    return make_tabular_env(
        name="tab-3s-n4",
        kernel_table=kernel,
        reward=reward,
        action_set=[LocalActionMap.constant(3, 0, "stay"), LocalActionMap.constant(3, 1, "move")],
        n_agents=n_agents,
        gamma=gamma,
    )


def _audit_env(n_states: int, n_agents: int, n_actions: int) -> MeanFieldEnv:
    return make_tabular_env(
        name="audit",
        kernel_table=identity_kernel(n_states, 1),
        reward=TableReward(np.zeros((n_states, n_actions))),
        action_set=[LocalActionMap.constant(n_states, 0, f"a{i}") for i in range(n_actions)],
        n_agents=n_agents,
        gamma=0.5,
    )


# invariance

def check_invariance(cases: int = 1000, seed: int = 0, tolerance: float = 1e-9) -> SuiteReport:
    rng = np.random.default_rng(seed)
    env = _audit_env(n_states=4, n_agents=5, n_actions=3)
    layout = FeatureLayout.for_env(env)
    draws = 20
    per_draw = max(1, math.ceil(cases / draws))
    deepset_worst, mlp_worst = 0.0, 0.0
    for _ in range(draws):
        params = init_params(32, layout.dim, 10.0, rng)
        params = params.with_alpha(params.alpha0 + 0.5 * rng.standard_normal(params.alpha.shape))
        report = audit_invariance(env, lambda obs, a: forward(params, obs, a, layout), per_draw, tolerance, rng)
        deepset_worst = max(deepset_worst, report.max_violation)
        mlp = init_mlp_params(32, mlp_input_dim(layout, env.n_agents), 10.0, rng)
        report = audit_invariance(env, lambda obs, a: mlp_forward(mlp, obs, a, layout), per_draw, tolerance, rng)
        mlp_worst = max(mlp_worst, report.max_violation)

    tab = tabular_instance()
    quotient = build_quotient(tab)
    tab_layout = FeatureLayout.for_env(tab)
    q_table = exact_q(quotient, class_policy(quotient, EnergyPolicy.uniform(tab_layout)))
    lifted = audit_invariance(tab, lambda obs, a: lift_values(quotient, q_table, obs)[a], cases, tolerance, rng)

    rows = [
        {"network": "deepset", "cases": draws * per_draw, "max_violation": f"{deepset_worst:.3e}",
         "expected": "invariant", "pass": deepset_worst <= tolerance},
        {"network": "mlp", "cases": draws * per_draw, "max_violation": f"{mlp_worst:.3e}",
         "expected": "sensitive", "pass": mlp_worst > 1e-6},
        {"network": "lifted-exact-q", "cases": cases, "max_violation": f"{lifted.max_violation:.3e}",
         "expected": "invariant", "pass": lifted.max_violation == 0.0},
    ]
    passed = all(row["pass"] for row in rows)
    summary = f"DeepSet {deepset_worst:.2e}, MLP {mlp_worst:.2e} (contrôle négatif), Q exacte {lifted.max_violation:.1e}"
    return SuiteReport("invariance", passed, rows, summary)


# gradients

def _relative_directional_error(f: Callable[[np.ndarray], float], gradient: np.ndarray, alpha: np.ndarray,
                                direction: np.ndarray, h: float, floor: float = 1e-5) -> Optional[float]:
    """Écart relatif |numérique - analytique| / |⟨∇F, v⟩| ; None si la dérivée directionnelle est sous `floor`."""
    analytic = float(np.sum(gradient * direction))
    if abs(analytic) < floor:
        return None
    numeric = (f(alpha + h * direction) - f(alpha - h * direction)) / (2.0 * h)
    return abs(numeric - analytic) / abs(analytic)


def check_gradients(points: int = 500, seed: int = 0, tolerance: float = 1e-4, h: float = 1e-6) -> SuiteReport:
    """Différences finies centrées le long de directions aléatoires unitaires, hors des points anguleux."""
    rng = np.random.default_rng(seed)
    layout = FeatureLayout(n_states=3, n_actions=3)
    n_agents = 4
    width = 24
    results: Dict[str, List[float]] = {"deepset": [], "mlp": []}
    kink_margin = 1e-3
    while min(len(v) for v in results.values()) < points:
        obs = random_observation(layout, n_agents, rng)
        abar_id = int(rng.integers(layout.n_actions))
        direction = rng.standard_normal((width, layout.dim))
        direction /= np.linalg.norm(direction)
        if len(results["deepset"]) < points:
            params = init_params(width, layout.dim, 10.0, rng)
            features = layout.features(obs, abar_id)
            if np.min(np.abs(features @ params.alpha.T)) > kink_margin:
                error = _relative_directional_error(
                    lambda a: forward(params.with_alpha(a), obs, abar_id, layout),
                    grad_alpha(params, obs, abar_id, layout), params.alpha, direction, h,
                )
                if error is not None:
                    results["deepset"].append(error)
        if len(results["mlp"]) < points:
            d_mlp = mlp_input_dim(layout, n_agents)
            mlp = init_mlp_params(width, d_mlp, 10.0, rng)
            x = mlp_inputs(obs, layout)[abar_id]
            if np.min(np.abs(mlp.alpha @ x)) > kink_margin:
                mlp_direction = rng.standard_normal((width, d_mlp))
                mlp_direction /= np.linalg.norm(mlp_direction)
                error = _relative_directional_error(
                    lambda a: mlp_forward(mlp.with_alpha(a), obs, abar_id, layout),
                    mlp_grad(mlp, obs, abar_id, layout), mlp.alpha, mlp_direction, h,
                )
                if error is not None:
                    results["mlp"].append(error)
    rows = [
        {"network": name, "points": len(errors), "max_relative_error": f"{max(errors):.3e}",
         "pass": max(errors) <= tolerance}
        for name, errors in results.items()
    ]
    passed = all(row["pass"] for row in rows)
    summary = ", ".join(f"{row['network']} {row['max_relative_error']}" for row in rows)
    return SuiteReport("gradients", passed, rows, summary)


# counting

def check_counting(max_agents: int = 6, max_states: int = 4) -> SuiteReport:
    rows = counting_rows(max_agents, max_states)
    growth = polynomial_growth_holds(64, 3)
    passed = all(row["agree"] for row in rows) and growth
    summary = f"{sum(r['agree'] for r in rows)}/{len(rows)} accords formule/énumération, croissance N^|S|: {growth}"
    return SuiteReport("counting", passed, rows, summary)


# prop4

def check_prop4(triples: int = 1000, seed: int = 0, tolerance: float = 1e-6) -> SuiteReport:
    """Solveur dual KL-régularisé contre π_k·exp{Q/υ} normalisée, et cohérence de la cible de régression."""
    rng = np.random.default_rng(seed)
    worst_tv, worst_target = 0.0, 0.0
    for _ in range(triples):
        size = int(rng.integers(2, 7))
        q_values = rng.normal(scale=2.0, size=size)
        prev = rng.dirichlet(np.ones(size)) + 1e-6
        prev /= prev.sum()
        upsilon = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
        try:
            numeric = kl_regularized_argmax(q_values, prev, upsilon)
        except SolverError as error:
            logger.warning("❌ solveur dual : %s", error)
            worst_tv = math.inf
            continue
        closed = softmax_probs(np.log(prev) + q_values / upsilon)
        worst_tv = max(worst_tv, total_variation(numeric, closed))

        # minimiseur tabulaire de la régression = cible ; π̄ ∝ exp{cible/τ_{k+1}}
        fa_prev = rng.normal(size=size)
        tau_k, tau_next = float(rng.uniform(0.2, 4.0)), float(rng.uniform(0.2, 4.0))
        targets = np.array([improvement_target(q, f, upsilon, tau_k, tau_next) for q, f in zip(q_values, fa_prev)])
        worst_target = max(
            worst_target,
            total_variation(softmax_probs(targets / tau_next), improved_distribution(q_values, fa_prev, upsilon, tau_k)),
        )
    rows = [
        {"check": "numeric-vs-closed-form", "triples": triples, "max_tv": f"{worst_tv:.3e}", "pass": worst_tv <= tolerance},
        {"check": "regression-minimizer", "triples": triples, "max_tv": f"{worst_target:.3e}", "pass": worst_target <= 1e-8},
    ]
    passed = all(row["pass"] for row in rows)
    return SuiteReport("prop4", passed, rows, f"TV max {worst_tv:.2e} (solveur), {worst_target:.2e} (régression)")


# td-oracle

def stationary_class_distribution(quotient, policy_table: np.ndarray, start: np.ndarray, steps: int = 5000,
                                  tol: float = 1e-13) -> np.ndarray:
    """Itère ν ← νP_π depuis la loi initiale jusqu'à stabilisation."""
    p_pi = policy_kernel(quotient, policy_table)
    nu = np.asarray(start, dtype=np.float64)
    for _ in range(steps):
        updated = p_pi.T @ nu
        if np.max(np.abs(updated - nu)) < tol:
            return updated
        nu = updated
    return nu


def td_oracle_rmse(env: MeanFieldEnv, schedule: TrainSchedule) -> float:
    """RMSE pondérée par σ_k entre F^Q appris (π uniforme) et Q^π exacte."""
    layout = FeatureLayout.for_env(env)
    policy = EnergyPolicy.uniform(layout)
    rng = np.random.default_rng(schedule.seed)
    critic = init_params(schedule.m_critic, layout.dim, schedule.radius_critic, rng, schedule.centered_init)
    critic = td_policy_evaluation(env, policy, critic, schedule, rng)
    quotient = build_quotient(env)
    table = class_policy(quotient, policy)
    q_exact = exact_q(quotient, table)
    nu = stationary_class_distribution(quotient, table, start_distribution(quotient, env.initial_dist))
    learned = np.array(
        [[forward(critic, quotient.representative(c), a, layout) for a in range(quotient.n_actions)]
         for c in range(quotient.n_classes)]
    )
    weights = nu[:, None] * table
    return float(np.sqrt(np.sum(weights * (learned - q_exact) ** 2) / np.sum(weights)))


def greedy_optimality_gap(env: MeanFieldEnv, actor, quotient=None) -> float:
    """
    Écart relatif (V* - V^glouton)/|V*| sous la loi exacte de la classe initiale.

    Sert aux critères de convergence à l'échelle du bureau.
    """
    quotient = quotient if quotient is not None else build_quotient(env)
    layout = FeatureLayout.for_env(env)
    start = start_distribution(quotient, env.initial_dist)
    v_star, _ = optimal_value(quotient, tol=1e-10)
    greedy = policy_value(quotient, class_policy(quotient, GreedyPolicy(actor, layout)))
    optimum = float(start @ v_star)
    return (optimum - float(start @ greedy)) / max(abs(optimum), 1e-12)


def check_td_oracle(seeds: int = 5, T: int = 5000, m: int = 512, tolerance: float = 0.05) -> SuiteReport:
    env = tabular_instance()
    rows = []
    for seed in range(seeds):
        schedule = TrainSchedule(K=1, T=T, m_actor=m, m_critic=m, seed=seed)
        rmse = td_oracle_rmse(env, schedule)
        rows.append({"seed": seed, "T": T, "m": m, "rmse": f"{rmse:.5f}"})
    median = float(np.median([float(row["rmse"]) for row in rows]))
    passed = median <= tolerance
    return SuiteReport("td-oracle", passed, rows, f"RMSE médiane {median:.4f} (seuil {tolerance})")


# linearization

def check_linearization(widths=(64, 256, 1024), seeds: int = 10, radius: float = 1.0, n_inputs: int = 200) -> SuiteReport:
    layout = FeatureLayout(n_states=3, n_actions=2)
    rows = []
    medians = []
    for m in widths:
        gaps = [linearization_gap(m, layout, 4, radius, n_inputs, np.random.default_rng(seed)) for seed in range(seeds)]
        medians.append(float(np.median(gaps)))
        rows.append({"m": m, "radius": radius, "median_gap": f"{medians[-1]:.6e}", "max_gap": f"{max(gaps):.6e}"})
    passed = all(later <= earlier for earlier, later in zip(medians, medians[1:]))
    return SuiteReport("linearization", passed, rows, "médianes " + " ≥ ".join(f"{v:.2e}" for v in medians))


_RUNNERS: Dict[str, Callable[[], SuiteReport]] = {
    "invariance": check_invariance,
    "gradients": check_gradients,
    "counting": check_counting,
    "prop4": check_prop4,
    "td-oracle": check_td_oracle,
    "linearization": check_linearization,
}


def run_suite(name: str) -> SuiteReport:
    """
    Exécute une suite de vérification.

    Args:
        name (str): Nom de la suite (voir SUITES)

    Returns:
        SuiteReport: Verdict, lignes du rapport et durée
    """
    if name not in _RUNNERS:
        raise KeyError(f"unknown suite {name!r}; expected one of {', '.join(SUITES)} or 'all'")
    start_time = time.time()
    report = _RUNNERS[name]()
    report.seconds = time.time() - start_time
    status = "✅" if report.passed else "❌"
    logger.info("%s suite %s: %s (%.1fs)", status, name, report.summary, report.seconds)
    return report


def run_all(names: Optional[List[str]] = None) -> List[SuiteReport]:
    return [run_suite(name) for name in (names or SUITES)]
