"""
Environnements - MF-PPO

Ce module fournit les environnements concrets à l'échelle du bureau :
- Navigation coopérative discrétisée (couvrir des points de repère)
- Poussée coopérative discrétisée (amener une balle sur un repère)
- Récompenses d'équipe normalisées dans [-1, 0] (r̄ = 1)

L'état local est une case de la grille (et, pour la poussée, la case de la
balle ajoutée à chaque agent pour préserver l'homogénéité).

Functions:
- navigation_reward(): -Σ_repères min_agents distance
- push_reward(): -(distance agent-balle + distance balle-repère)
- make_navigation_env() / make_push_env(): Construction des environnements
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import DegenerateConfigurationError
from core.mf_core import LocalActionMap, MeanFieldEnv
from core.symmetry import class_count

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]

# Actions primitives : immobile, haut, bas, gauche, droite
MOVES: Tuple[Cell, ...] = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
MOVE_NAMES = ("stay", "up", "down", "left", "right")
STAY, UP, DOWN, LEFT, RIGHT = range(5)

# Au-delà, l'oracle quotient n'est pas construit
QUOTIENT_CLASS_LIMIT = 10**5


class GridWorldSpec(BaseModel):
    """Spécification d'une grille carrée à N agents."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "grid"
    side: int = Field(ge=1)
    landmarks: List[Cell]
    slip: float = Field(default=0.0, ge=0.0, lt=1.0)
    n_agents: int = Field(ge=1)
    gamma: float = Field(default=0.9, ge=0.0, lt=1.0)
    ball_start: Optional[Cell] = None

    @model_validator(mode="after")
    def _cells_inside(self) -> "GridWorldSpec":
        cells = list(self.landmarks) + ([self.ball_start] if self.ball_start is not None else [])
        if not self.landmarks:
            raise ValueError("at least one landmark is required")
        for row, col in cells:
            if not (0 <= row < self.side and 0 <= col < self.side):
                raise ValueError(f"cell {(row, col)} outside {self.side}x{self.side} grid")
        return self

    @property
    def n_cells(self) -> int:
        return self.side * self.side

    @property
    def diagonal(self) -> float:
        return math.sqrt(2.0) * (self.side - 1)

    def cell_of(self, index: int) -> Cell:
        return divmod(index, self.side)

    def index_of(self, cell: Cell) -> int:
        return cell[0] * self.side + cell[1]


def _distance(a: Cell, b: Cell) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def navigation_reward(
    agent_cells: Sequence[Cell], landmarks: Sequence[Cell], scale: Optional[float] = None
) -> float:
    """
    Récompense d'équipe de la navigation coopérative.

    Args:
        agent_cells (Sequence[Cell]): Cases occupées par les agents
        landmarks (Sequence[Cell]): Cases des repères
        scale (float, optional): Normalisation (diagonale × nombre de repères)

    Returns:
        float: -Σ_repères min_agents ∥repère - agent∥₂, divisé par scale
    """
    if not agent_cells or not landmarks:
        raise DegenerateConfigurationError("navigation reward needs agents and landmarks")
    total = sum(min(_distance(landmark, agent) for agent in agent_cells) for landmark in landmarks)
    return -total / scale if scale else -total


def push_reward(agent_cells: Sequence[Cell], ball_cell: Cell, landmark_cell: Cell, scale: Optional[float] = None) -> float:
    """-(min_j ∥x_j - balle∥₂ + ∥balle - repère∥₂), divisé par scale."""
    if not agent_cells:
        raise DegenerateConfigurationError("push reward needs at least one agent")
    total = min(_distance(agent, ball_cell) for agent in agent_cells) + _distance(ball_cell, landmark_cell)
    return -total / scale if scale else -total


def _move(cell: Cell, action: int, side: int) -> Cell:
    row, col = cell[0] + MOVES[action][0], cell[1] + MOVES[action][1]
    if 0 <= row < side and 0 <= col < side:
        return (row, col)
    return cell


def _step_toward(cell: Cell, target: Cell) -> int:
    """Déplacement d'un pas vers la cible : ligne d'abord, puis colonne."""
    if target[0] < cell[0]:
        return UP
    if target[0] > cell[0]:
        return DOWN
    if target[1] < cell[1]:
        return LEFT
    if target[1] > cell[1]:
        return RIGHT
    return STAY


def push_ball(ball: Cell, agent_cells: Sequence[Cell], side: int) -> Cell:
    """
    La balle s'éloigne d'une case de l'agent le plus proche lorsqu'il est
    adjacent ; égalités vers le plus petit identifiant de direction.
    """
    nearest = min(_distance(agent, ball) for agent in agent_cells)
    if nearest != 1.0:
        return ball
    directions = sorted(
        action
        for action in (UP, DOWN, LEFT, RIGHT)
        for agent in agent_cells
        if (ball[0] - agent[0], ball[1] - agent[1]) == MOVES[action]
    )
    return _move(ball, directions[0], side)


@dataclass(frozen=True)
class GridMoveKernel:
    """Déplacement voulu avec probabilité 1 - slip, sinon l'agent reste sur place."""

    side: int
    slip: float

    def __call__(self, state: int, counts: np.ndarray, action: int) -> np.ndarray:
        probs = np.zeros(self.side * self.side)
        cell = divmod(state, self.side)
        target = _move(cell, action, self.side)
        probs[target[0] * self.side + target[1]] += 1.0 - self.slip
        probs[state] += self.slip
        return probs


@dataclass(frozen=True)
class NavigationReward:
    side: int
    landmarks: Tuple[Cell, ...]
    scale: float

    def __call__(self, counts: np.ndarray, abar_id: int) -> float:
        cells = [divmod(int(s), self.side) for s in np.flatnonzero(counts)]
        return navigation_reward(cells, self.landmarks, self.scale)

    def max_abs(self) -> float:
        return 1.0


@dataclass(frozen=True)
class PushKernel:
    """État local = (case de l'agent, case de la balle) encodé cell·|cases| + balle."""

    side: int
    slip: float

    def __call__(self, state: int, counts: np.ndarray, action: int) -> np.ndarray:
        n_cells = self.side * self.side
        cell_index, ball_index = divmod(state, n_cells)
        agents = [divmod(int(s) // n_cells, self.side) for s in np.flatnonzero(counts)]
        ball = push_ball(divmod(ball_index, self.side), agents, self.side)
        next_ball = ball[0] * self.side + ball[1]
        cell = divmod(cell_index, self.side)
        target = _move(cell, action, self.side)
        probs = np.zeros(n_cells * n_cells)
        probs[(target[0] * self.side + target[1]) * n_cells + next_ball] += 1.0 - self.slip
        probs[cell_index * n_cells + next_ball] += self.slip
        return probs


@dataclass(frozen=True)
class PushReward:
    side: int
    landmark: Cell
    scale: float

    def __call__(self, counts: np.ndarray, abar_id: int) -> float:
        n_cells = self.side * self.side
        occupied = np.flatnonzero(counts)
        agents = [divmod(int(s) // n_cells, self.side) for s in occupied]
        ball = divmod(int(occupied[0]) % n_cells, self.side)
        return push_reward(agents, ball, self.landmark, self.scale)

    def max_abs(self) -> float:
        return 1.0


def navigation_action_set(spec: GridWorldSpec) -> Tuple[LocalActionMap, ...]:
    """Les 5 applications constantes plus « vers le repère le plus proche »."""
    constants = tuple(LocalActionMap.constant(spec.n_cells, a, name=MOVE_NAMES[a]) for a in range(len(MOVES)))
    greedy = []
    for index in range(spec.n_cells):
        cell = spec.cell_of(index)
        target = min(spec.landmarks, key=lambda landmark: _distance(cell, landmark))
        greedy.append(_step_toward(cell, target))
    return constants + (LocalActionMap(tuple(greedy), name="greedy-landmark"),)


def push_action_set(spec: GridWorldSpec) -> Tuple[LocalActionMap, ...]:
    """Les 5 applications constantes plus « se placer derrière la balle et pousser »."""
    n_cells = spec.n_cells
    landmark = spec.landmarks[0]
    constants = tuple(LocalActionMap.constant(n_cells * n_cells, a, name=MOVE_NAMES[a]) for a in range(len(MOVES)))
    greedy = []
    for state in range(n_cells * n_cells):
        cell_index, ball_index = divmod(state, n_cells)
        cell, ball = spec.cell_of(cell_index), spec.cell_of(ball_index)
        push = _step_toward(ball, landmark)
        if push == STAY:
            greedy.append(STAY)
            continue
        behind = (ball[0] - MOVES[push][0], ball[1] - MOVES[push][1])
        greedy.append(push if cell == behind else _step_toward(cell, behind))
    return constants + (LocalActionMap(tuple(greedy), name="greedy-push"),)


def _warn_if_oracle_unavailable(env: MeanFieldEnv) -> None:
    classes = class_count(env.n_agents, env.n_states) * env.n_states
    if classes > QUOTIENT_CLASS_LIMIT:
        logger.warning(
            "⚠️  %s: ~%d classes (|S|=%d, N=%d), vérifications par oracle quotient indisponibles",
            env.name,
            classes,
            env.n_states,
            env.n_agents,
        )


def make_navigation_env(spec: GridWorldSpec) -> MeanFieldEnv:
    """Navigation coopérative : positions initiales uniformes sur la grille."""
    scale = (spec.diagonal or 1.0) * len(spec.landmarks)
    env = MeanFieldEnv(
        name=spec.name,
        n_states=spec.n_cells,
        n_local_actions=len(MOVES),
        action_set=navigation_action_set(spec),
        n_agents=spec.n_agents,
        gamma=spec.gamma,
        reward_bound=1.0,
        kernel=GridMoveKernel(spec.side, spec.slip),
        reward=NavigationReward(spec.side, tuple(spec.landmarks), scale),
        metadata={"kind": "navigation", "spec": spec},
    )
    _warn_if_oracle_unavailable(env)
    return env


def make_push_env(spec: GridWorldSpec) -> MeanFieldEnv:
    """Poussée coopérative : agents uniformes, balle en ball_start, repère = landmarks[0]."""
    n_cells = spec.n_cells
    ball_start = spec.ball_start if spec.ball_start is not None else (spec.side // 2, spec.side // 2)
    initial = np.zeros(n_cells * n_cells)
    initial[np.arange(n_cells) * n_cells + spec.index_of(ball_start)] = 1.0 / n_cells
    env = MeanFieldEnv(
        name=spec.name,
        n_states=n_cells * n_cells,
        n_local_actions=len(MOVES),
        action_set=push_action_set(spec),
        n_agents=spec.n_agents,
        gamma=spec.gamma,
        reward_bound=1.0,
        kernel=PushKernel(spec.side, spec.slip),
        reward=PushReward(spec.side, spec.landmarks[0], 2.0 * (spec.diagonal or 1.0)),
        initial_dist=initial,
        metadata={"kind": "push", "spec": spec},
    )
    _warn_if_oracle_unavailable(env)
    return env


def agent_cells(env: MeanFieldEnv, states: Sequence[int]) -> List[Cell]:
    """Cases des agents (décode l'état local de la poussée si besoin)."""
    spec: GridWorldSpec = env.metadata["spec"]
    if env.metadata.get("kind") == "push":
        return [spec.cell_of(s // spec.n_cells) for s in states]
    return [spec.cell_of(s) for s in states]
