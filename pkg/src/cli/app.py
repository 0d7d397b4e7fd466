"""
MF-PPO - Interface en ligne de commande

Point d'entrée des runs d'entraînement, des suites de vérification et des
oracles exacts. Chaque sous-commande renvoie un code de sortie :
0 succès, 1 vérification en échec, 2 configuration invalide, 3 perte non finie.

Sous-commandes:
- train: Entraîne MF-PPO à partir d'un fichier YAML (métriques, points de contrôle, manifeste)
- check: Exécute une suite de vérification (ou toutes)
- eval: Évalue un point de contrôle en politique gloutonne
- count: Table de dénombrement des classes de permutation
- oracle-dump: Exporte V*, Q^π uniforme et la table des classes
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from core import __version__
from core.check_suites import SUITES, run_suite
from core.config import (
    RunConfig,
    build_env,
    global_state,
    load_run_config,
    resolve_env_spec,
    show_runtime_info,
)
from core.deepset_net import FeatureLayout, MlpParams
from core.errors import ConfigError, DimensionMismatchError, InstanceTooLargeError, MfPpoError, NonFiniteError
from core.mf_core import MeanFieldEnv
from core.oracle import build_quotient, class_policy, class_table_rows, exact_q, optimal_value
from core.policy import EnergyPolicy
from core.symmetry import counting_rows
from core.trainer import METRIC_COLUMNS, IterationRecord, evaluate_returns, greedy_policy, mf_ppo
from utils.checkpoint_io import load_params, save_params
from utils.utils import append_csv_row, content_hash, ensure_dir, get_timestamp, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_NON_FINITE = 0, 1, 2, 3
DEFAULT_EVAL_EPISODES = 100


def setup_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=getattr(logging, (level or global_state["log_level"]).upper(), logging.INFO),
        format="%(message)s",
        force=True,
    )


def _output_dir(requested: Optional[str], fallback: str) -> Path:
    return ensure_dir(requested or os.path.join(global_state["out_dir"], fallback))


def _env_from_args(args) -> MeanFieldEnv:
    """Environnement d'après --config (section env) ou --env (scénario)."""
    if getattr(args, "config", None):
        return build_env(load_run_config(args.config).env)
    if getattr(args, "env", None):
        return build_env(resolve_env_spec({"name": args.env}))
    raise ConfigError("an environment is required (--config or --env)")


# Fonction pour l'entraînement
def cmd_train(args) -> int:
    """
    Entraîne MF-PPO et écrit métriques, points de contrôle et manifeste.

    Returns:
        int: Code de sortie
    """
    try:
        config: RunConfig = load_run_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        schedule = config.schedule.model_copy(update=overrides)
        checkpoint_every = args.checkpoint_every if args.checkpoint_every is not None else config.run.checkpoint_every
        env = build_env(config.env)
    except (ConfigError, DimensionMismatchError, ValueError) as e:
        print(f"❌ Configuration invalide: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = _output_dir(args.out or config.run.out_dir, f"{env.name}-seed{schedule.seed}")
    metrics_path = out_dir / "metrics.csv"
    write_csv(metrics_path, [], METRIC_COLUMNS)
    print(f"🚀 Entraînement {env.name} -> {out_dir}")
    print(show_runtime_info())

    def on_iteration(record: IterationRecord, actor, critic) -> None:
        append_csv_row(metrics_path, record.as_row(), METRIC_COLUMNS)
        if checkpoint_every and (record.k + 1) % checkpoint_every == 0:
            save_params(out_dir / "checkpoints" / f"actor_k{record.k + 1:04d}.bin", actor)
            save_params(out_dir / "checkpoints" / f"critic_k{record.k + 1:04d}.bin", critic)

    start_time = time.time()
    try:
        result = mf_ppo(env, schedule, callback=on_iteration)
    except NonFiniteError as e:
        print(f"💥 Perte non finie, entraînement interrompu: {e}", file=sys.stderr)
        return EXIT_NON_FINITE
    save_params(out_dir / "actor.bin", result.actor)
    save_params(out_dir / "critic.bin", result.critic)

    inputs = [Path(args.config), Path(global_state["scenario_file"])]
    write_json(
        out_dir / "manifest.json",
        {
            "version": __version__,
            "timestamp": get_timestamp(),
            "seed": schedule.seed,
            "config_path": str(args.config),
            "content_hash": content_hash(*[p for p in inputs if p.is_file()]),
            "resolved_config": {
                "env": config.env.model_dump(mode="json"),
                "schedule": schedule.model_dump(mode="json"),
                "run": config.run.model_dump(mode="json") | {"checkpoint_every": checkpoint_every},
            },
            "layout": {"n_states": result.layout.n_states, "n_actions": result.layout.n_actions},
            "env_steps": result.env_steps,
        },
    )
    print(f"✅ {len(result.records)} itérations en {time.time() - start_time:.1f}s, V̂ final = {result.final_value:.4f}")

    failed = []
    for suite in config.run.checks:
        for name in SUITES if suite == "all" else (suite,):
            report = run_suite(name)
            write_csv(out_dir / f"check_{name}.csv", report.rows)
            if not report.passed:
                failed.append(name)
    if failed:
        print(f"❌ Suites en échec: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


# Fonction pour les suites de vérification
def cmd_check(args) -> int:
    if args.suite != "all" and args.suite not in SUITES:
        print(f"❌ Suite inconnue: {args.suite} (attendu: {', '.join(SUITES)}, all)", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _output_dir(args.out, "checks")
    names = SUITES if args.suite == "all" else (args.suite,)
    all_passed = True
    for name in names:
        report = run_suite(name)
        write_csv(out_dir / f"check_{name}.csv", report.rows)
        status = "✅ PASS" if report.passed else "❌ FAIL"
        print(f"{status} {name}: {report.summary} ({report.seconds:.1f}s)")
        all_passed = all_passed and report.passed
    print(f"📋 Rapports écrits dans {out_dir}")
    return EXIT_OK if all_passed else EXIT_CHECK_FAILED


# Fonction pour l'évaluation d'un point de contrôle
def cmd_eval(args) -> int:
    """
    Évaluation gloutonne d'un acteur, comparée à la politique uniforme mesurée dans le même run.

    Sans --episodes, le nombre d'épisodes vient de run.eval_episodes du
    fichier --config, sinon de DEFAULT_EVAL_EPISODES.
    """
    if args.episodes is not None and args.episodes < 1:
        print("❌ --episodes doit être ≥ 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        episodes = args.episodes
        if args.config:
            config: RunConfig = load_run_config(args.config)
            env = build_env(config.env)
            if episodes is None:
                episodes = config.run.eval_episodes
        else:
            env = _env_from_args(args)
        if episodes is None:
            episodes = DEFAULT_EVAL_EPISODES
        actor = load_params(args.checkpoint)
        layout = FeatureLayout.for_env(env)
        if isinstance(actor, MlpParams) or actor.d != layout.dim:
            raise DimensionMismatchError(f"checkpoint d={actor.d} incompatible with env layout d={layout.dim}")
    except (MfPpoError, ValueError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG

    logger.info("Évaluation sur %d épisodes", episodes)
    rng_greedy, rng_uniform = (np.random.default_rng(child) for child in np.random.SeedSequence(args.seed).spawn(2))
    greedy = evaluate_returns(env, greedy_policy(actor, layout), episodes, rng_greedy)
    uniform = evaluate_returns(env, EnergyPolicy.uniform(layout), episodes, rng_uniform)
    rows = []
    for name, summary in (("greedy", greedy), ("uniform", uniform)):
        print(f"📊 {name}: {summary.mean:.4f} ± {summary.half_width:.4f} (IC 95 %, {summary.episodes} épisodes)")
        rows.append(
            {
                "policy": name,
                "episodes": summary.episodes,
                "mean": f"{summary.mean:.12g}",
                "half_width": f"{summary.half_width:.12g}",
                "low": f"{summary.low:.12g}",
                "high": f"{summary.high:.12g}",
            }
        )
    out_dir = _output_dir(args.out, "eval")
    write_csv(out_dir / "eval.csv", rows)
    return EXIT_OK


def cmd_count(args) -> int:
    rows = counting_rows(args.max_agents, args.max_states)
    print(f"{'N':>3} {'|S|':>4} {'formule':>10} {'énumération':>12}  accord")
    for row in rows:
        print(f"{row['N']:>3} {row['S']:>4} {row['formula']:>10} {row['enumerated']:>12}  {'✅' if row['agree'] else '❌'}")
    if args.out:
        write_csv(Path(ensure_dir(args.out)) / "counting.csv", rows)
    return EXIT_OK if all(row["agree"] for row in rows) else EXIT_CHECK_FAILED


def cmd_oracle_dump(args) -> int:
    """Exporte la table des classes avec r, Q^π (π uniforme), V* et l'action gloutonne."""
    try:
        env = _env_from_args(args)
        quotient = build_quotient(env)
    except InstanceTooLargeError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MfPpoError, ValueError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG
    layout = FeatureLayout.for_env(env)
    q_uniform = exact_q(quotient, class_policy(quotient, EnergyPolicy.uniform(layout)))
    v_star, greedy = optimal_value(quotient, tol=1e-10)
    rows = class_table_rows(
        quotient, {"reward": quotient.reward, "q_uniform": q_uniform, "v_star": v_star, "greedy": greedy}
    )
    out_dir = _output_dir(args.out, f"oracle-{env.name}")
    write_csv(out_dir / "classes.csv", rows)
    print(f"📋 {quotient.n_classes} classes exportées dans {out_dir / 'classes.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfppo", description="Mean-Field PPO : entraînement et oracles exacts")
    parser.add_argument("--log-level", default=None, help="Niveau de log (défaut : MFPPO_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Entraîner MF-PPO")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--out", default=None)
    train.add_argument("--checkpoint-every", type=int, default=None)
    train.set_defaults(handler=cmd_train)

    check = sub.add_parser("check", help="Suites de vérification")
    check.add_argument("--suite", default="all")
    check.add_argument("--out", default=None)
    check.set_defaults(handler=cmd_check)

    evaluate = sub.add_parser("eval", help="Évaluer un point de contrôle")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--config", default=None)
    evaluate.add_argument("--env", default=None)
    evaluate.add_argument("--episodes", type=int, default=None)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--out", default=None)
    evaluate.set_defaults(handler=cmd_eval)

    count = sub.add_parser("count", help="Dénombrement des classes")
    count.add_argument("--max-agents", type=int, default=6)
    count.add_argument("--max-states", type=int, default=4)
    count.add_argument("--out", default=None)
    count.set_defaults(handler=cmd_count)

    dump = sub.add_parser("oracle-dump", help="Exporter les tables de l'oracle")
    dump.add_argument("--config", default=None)
    dump.add_argument("--env", default=None)
    dump.add_argument("--out", default=None)
    dump.set_defaults(handler=cmd_oracle_dump)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Point d'entrée principal de la ligne de commande.

    Args:
        argv (list, optional): Arguments (défaut : sys.argv[1:])

    Returns:
        int: Code de sortie
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    return args.handler(args)


# Lancer l'application si exécutée directement
if __name__ == "__main__":
    sys.exit(main())
