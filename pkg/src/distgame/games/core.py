"""Shared types for multi-team games: team layout, communication graphs, steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


class GameContractError(ValueError):
    """Raised when an environment is driven outside its contract."""


@dataclass(frozen=True)
class TeamSpec:
    """Team sizes and per-agent dimensions.

    Agents are numbered globally team by team: team 0 owns indices
    ``0..M_0-1``, team 1 the next ``M_1`` and so on.
    """

    agents_per_team: tuple[int, ...]
    state_dim: int
    action_dim: int

    def __post_init__(self):
        object.__setattr__(self, "agents_per_team", tuple(int(m) for m in self.agents_per_team))
        if not self.agents_per_team or min(self.agents_per_team) < 1:
            raise GameContractError(f"agents_per_team must be positive, got {self.agents_per_team}")
        if self.state_dim < 1 or self.action_dim < 1:
            raise GameContractError("state_dim and action_dim must be positive")

    @property
    def n_teams(self) -> int:
        return len(self.agents_per_team)

    @property
    def n_agents(self) -> int:
        return sum(self.agents_per_team)

    @property
    def team_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_teams), self.agents_per_team)

    def team_slice(self, team: int) -> slice:
        start = sum(self.agents_per_team[:team])
        return slice(start, start + self.agents_per_team[team])

    def global_index(self, team: int, local: int) -> int:
        if not 0 <= local < self.agents_per_team[team]:
            raise GameContractError(f"team {team} has no agent {local}")
        return sum(self.agents_per_team[:team]) + local

    def local_index(self, agent: int) -> tuple[int, int]:
        team = int(self.team_of[agent])
        return team, agent - self.team_slice(team).start


class CommGraph:
    """Directed communication graph at one step.

    ``adjacency[l, p]`` is True when agent p's information reaches agent l.
    Self-loops are always present.
    """

    __slots__ = ("step", "adjacency", "team_of")

    def __init__(self, step: int, adjacency, team_of):
        adj = np.array(adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GameContractError(f"adjacency must be square, got {adj.shape}")
        np.fill_diagonal(adj, True)
        self.step = int(step)
        self.adjacency = adj
        self.team_of = np.asarray(team_of, dtype=int)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, l: int) -> list[int]:
        """Self first, then the remaining neighbors by ascending global id."""
        others = [int(p) for p in np.flatnonzero(self.adjacency[l]) if p != l]
        return [l] + others

    def intra_neighbors(self, l: int) -> list[int]:
        return [p for p in self.neighbors(l) if self.team_of[p] == self.team_of[l]]

    def inter_neighbors(self, l: int) -> list[int]:
        return [p for p in self.neighbors(l) if self.team_of[p] != self.team_of[l]]

    def edges(self) -> set[tuple[int, int]]:
        return {(int(l), int(p)) for l, p in zip(*np.nonzero(self.adjacency))}

    def weight_matrix(self) -> np.ndarray:
        return self.adjacency.astype(np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, CommGraph)
            and self.step == other.step
            and np.array_equal(self.adjacency, other.adjacency)
        )

    def __repr__(self):
        return f"CommGraph(step={self.step}, edges={int(self.adjacency.sum())})"


def proximity_graph(positions, radius: float, team_of, step: int = 0) -> CommGraph:
    """Edge (l, p) iff ||q_l - q_p|| < radius, plus self-loops."""
    if radius <= 0:
        raise GameContractError("radius must be positive")
    q = np.asarray(positions, dtype=np.float64)
    if q.ndim == 1:
        q = q[:, None]
    diff = q[:, None, :] - q[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    return CommGraph(step, dist < radius, team_of)


def complete_graph(n_agents: int, team_of, step: int = 0) -> CommGraph:
    return CommGraph(step, np.ones((n_agents, n_agents), dtype=bool), team_of)


def random_sparse_graph(seed: int, step: int, n_agents: int, density: float, team_of) -> CommGraph:
    """Symmetric random graph; each off-diagonal pair is kept with probability ``density``.

    The draw depends only on ``(seed, step)``.
    """
    if not 0.0 <= density <= 1.0:
        raise GameContractError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng([int(seed), int(step), 0x5EED])
    upper = np.triu(rng.random((n_agents, n_agents)) < density, k=1)
    return CommGraph(step, upper | upper.T, team_of)


@dataclass
class StepResult:
    state: np.ndarray
    costs: np.ndarray
    graph: CommGraph
    done: bool
    truncated: bool = False
    info: dict[str, Any] = field(default_factory=dict)


@dataclass
class Transition:
    state: np.ndarray
    actions: np.ndarray
    next_state: np.ndarray
    costs: np.ndarray
    graph: CommGraph
    done: bool
    step: int


class MultiTeamGame:
    """Base class for the environments.

    Subclasses fill ``spec``, ``horizon``, ``action_low``/``action_high`` and
    implement ``_reset`` and ``_step``. ``state`` is the (M, X) stack of
    per-agent state vectors in global agent order.
    """

    spec: TeamSpec
    horizon: int
    action_low: np.ndarray
    action_high: np.ndarray
    cost_bound: float = 1e6
    finite_horizon: bool = True

    def __init__(self):
        self.k = 0
        self.state: np.ndarray | None = None
        self.graph: CommGraph | None = None

    def reset(self, seed: int) -> tuple[np.ndarray, CommGraph]:
        self.k = 0
        self.state = self._reset(int(seed))
        self.graph = self.make_graph(self.state, 0)
        return self.state.copy(), self.graph

    def clamp_actions(self, actions) -> np.ndarray:
        u = np.asarray(actions, dtype=np.float64).reshape(self.spec.n_agents, self.spec.action_dim)
        if not np.all(np.isfinite(u)):
            raise GameContractError("actions must be finite")
        return np.clip(u, self.action_low, self.action_high)

    def step(self, actions) -> StepResult:
        if self.state is None:
            raise GameContractError("step() before reset()")
        if self.k >= self.horizon:
            raise GameContractError("episode already finished")
        u = self.clamp_actions(actions)
        next_state, costs, info = self._step(u)
        costs = np.clip(costs, -self.cost_bound, self.cost_bound)
        self.k += 1
        self.state = next_state
        self.graph = self.make_graph(next_state, self.k)
        done = self.k >= self.horizon
        info.setdefault("applied_actions", u)
        return StepResult(
            next_state.copy(),
            costs,
            self.graph,
            done,
            truncated=done and not self.finite_horizon,
            info=info,
        )

    def make_graph(self, state: np.ndarray, k: int) -> CommGraph:
        raise NotImplementedError

    def positions(self, state: np.ndarray) -> np.ndarray:
        """Planar (or scalar) agent positions used by graphs and metrics."""
        raise NotImplementedError

    def _reset(self, seed: int):
        raise NotImplementedError

    def _step(self, actions: np.ndarray):
        raise NotImplementedError
