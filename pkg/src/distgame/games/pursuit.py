"""Two-team pursuit-evasion in a square arena with circular obstacles.

Team 0 are the pursuers, team 1 the evaders. Agents are damped double
integrators driven by acceleration commands in ``[-1, 1]^2``; wall and
obstacle contacts are resolved by projecting the agent back to the
boundary and removing the inward velocity component. Agent state is
``[p_x, p_y, v_x, v_y]``.

Costs are evaluated on the pre-step state. With ``s`` the sum of all
pursuer-evader distances and ``c`` the number of caught evaders (an evader
is caught when its nearest pursuer is within ``catch_radius``):

* evader cost   = -evader_distance_coef * s + evader_catch_penalty * c
* pursuer cost  = pursuer_distance_coef * s - pursuer_catch_reward * c
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import MultiTeamGame, TeamSpec, proximity_graph

PURSUERS = 0
EVADERS = 1


@dataclass
class PursuitConfig:
    n_pursuers: int = 3
    n_evaders: int = 3
    horizon: int = 100
    dt: float = 0.1
    damping: float = 0.25
    arena_half: float = 1.0
    obstacles: list = field(default_factory=lambda: [[-0.4, 0.4], [0.4, -0.4]])
    obstacle_radius: float = 0.2
    pursuer_radius: float = 0.075
    evader_radius: float = 0.05
    pursuer_accel: float = 3.0
    evader_accel: float = 4.0
    pursuer_max_speed: float = 1.0
    evader_max_speed: float = 1.3
    obs_radius: float = 1.0
    catch_radius: float = 0.125
    pursuer_distance_coef: float = 0.1
    evader_distance_coef: float = 0.1
    pursuer_catch_reward: float = 10.0
    evader_catch_penalty: float = 10.0
    spawn_clearance: float = 0.05


def catches(pursuer_pos, evader_pos, catch_radius: float = 0.125) -> np.ndarray:
    """Per-evader Iverson bracket [min_p |q_e - q_p| <= catch_radius]."""
    p = np.asarray(pursuer_pos, dtype=np.float64)
    e = np.asarray(evader_pos, dtype=np.float64)
    d = np.sqrt(((e[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1))
    return d.min(axis=1) <= catch_radius


def pursuit_cost(pursuer_pos, evader_pos, config: PursuitConfig | None = None) -> tuple[np.ndarray, int]:
    """Return ([pursuer cost, evader cost], number of caught evaders)."""
    cfg = config or PursuitConfig()
    p = np.asarray(pursuer_pos, dtype=np.float64)
    e = np.asarray(evader_pos, dtype=np.float64)
    d = np.sqrt(((e[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1))
    total = d.sum()
    n_caught = int((d.min(axis=1) <= cfg.catch_radius).sum())
    pursuer = cfg.pursuer_distance_coef * total - cfg.pursuer_catch_reward * n_caught
    evader = -cfg.evader_distance_coef * total + cfg.evader_catch_penalty * n_caught
    return np.array([pursuer, evader]), n_caught


class PursuitEvasionGame(MultiTeamGame):
    finite_horizon = False

    def __init__(self, config: PursuitConfig | None = None):
        super().__init__()
        self.config = cfg = config or PursuitConfig()
        self.spec = TeamSpec((cfg.n_pursuers, cfg.n_evaders), 4, 2)
        self.horizon = int(cfg.horizon)
        self.action_low = np.full(2, -1.0)
        self.action_high = np.full(2, 1.0)
        self.team_of = self.spec.team_of
        is_p = self.team_of == PURSUERS
        self.accel = np.where(is_p, cfg.pursuer_accel, cfg.evader_accel)
        self.max_speed = np.where(is_p, cfg.pursuer_max_speed, cfg.evader_max_speed)
        self.radius = np.where(is_p, cfg.pursuer_radius, cfg.evader_radius)
        self.obstacles = np.asarray(cfg.obstacles, dtype=np.float64).reshape(-1, 2)
        bound = 2.0 * cfg.arena_half * np.sqrt(2.0) * cfg.n_pursuers * cfg.n_evaders
        self.cost_bound = max(cfg.pursuer_distance_coef, cfg.evader_distance_coef) * bound + max(
            cfg.pursuer_catch_reward, cfg.evader_catch_penalty
        ) * cfg.n_evaders

    @property
    def pursuer_index(self) -> np.ndarray:
        return np.flatnonzero(self.team_of == PURSUERS)

    @property
    def evader_index(self) -> np.ndarray:
        return np.flatnonzero(self.team_of == EVADERS)

    def positions(self, state):
        return np.asarray(state)[:, :2]

    def make_graph(self, state, k):
        return proximity_graph(state[:, :2], self.config.obs_radius, self.team_of, k)

    def _free(self, q: np.ndarray, r: float) -> bool:
        lim = self.config.arena_half - r
        if np.any(np.abs(q) > lim):
            return False
        gap = np.sqrt(((self.obstacles - q) ** 2).sum(axis=1))
        return bool(np.all(gap >= self.config.obstacle_radius + r + self.config.spawn_clearance))

    def _reset(self, seed):
        rng = np.random.default_rng(seed)
        n = self.spec.n_agents
        state = np.zeros((n, 4))
        for a in range(n):
            r = self.radius[a]
            lim = self.config.arena_half - r
            while True:
                q = rng.uniform(-lim, lim, size=2)
                if self._free(q, r):
                    break
            state[a, :2] = q
        return state

    def resolve_contacts(self, q: np.ndarray, v: np.ndarray) -> None:
        """Project positions out of walls and obstacles in place."""
        cfg = self.config
        for a in range(q.shape[0]):
            lim = cfg.arena_half - self.radius[a]
            for d in range(2):
                if q[a, d] > lim:
                    q[a, d] = lim
                    v[a, d] = min(v[a, d], 0.0)
                elif q[a, d] < -lim:
                    q[a, d] = -lim
                    v[a, d] = max(v[a, d], 0.0)
            for c in self.obstacles:
                off = q[a] - c
                dist = np.sqrt(off @ off)
                reach = cfg.obstacle_radius + self.radius[a]
                if dist < reach:
                    nrm = off / dist if dist > 0 else np.array([1.0, 0.0])
                    q[a] = c + nrm * reach
                    inward = v[a] @ nrm
                    if inward < 0:
                        v[a] = v[a] - inward * nrm

    def _step(self, u):
        cfg = self.config
        q = self.state[:, :2].copy()
        v = self.state[:, 2:].copy()
        costs, n_caught = pursuit_cost(q[self.pursuer_index], q[self.evader_index], cfg)
        v = v * (1.0 - cfg.damping) + u * self.accel[:, None] * cfg.dt
        speed = np.sqrt((v * v).sum(axis=1))
        over = speed > self.max_speed
        v[over] *= (self.max_speed[over] / speed[over])[:, None]
        q = q + v * cfg.dt
        self.resolve_contacts(q, v)
        info = {"positions": self.state[:, :2].copy(), "catches": n_caught}
        return np.column_stack([q, v]), costs, info
