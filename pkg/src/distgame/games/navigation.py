"""Multi-robot unicycle navigation game.

Each robot is its own team. Robots start on a ring and must reach goals on
the same ring rotated by ``goal_rotation_deg``, paying a quadratic tracking
cost, a quadratic control cost and a proximity penalty whenever another
robot is closer than ``d_prox``. The terminal tracking weight is
``terminal_weight``.

The policy-facing state of robot l is its goal error in the world frame
followed by the same error rotated into the robot's body frame,
``[e_x, e_y, e_fwd, e_lat]``. Every component vanishes at the goal, so a
state-feedback law ``u = -G(x) x`` can come to rest there. The absolute pose
lives in ``pose`` and is integrated with explicit Euler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MultiTeamGame, TeamSpec, proximity_graph


@dataclass
class NavigationConfig:
    n_agents: int = 3
    horizon: int = 100
    dt: float = 0.1
    v_max: float = 1.0
    omega_max: float = 2.0
    d_prox: float = 0.5
    r_comm: float = 0.5
    beta: float = 1.0
    state_weight: float = 1.0
    control_weight: float = 1.0
    terminal_weight: float = 100.0
    ring_radius: float = 1.0
    radius_jitter: float = 0.1
    angle_jitter: float = 0.3
    goal_rotation_deg: float = 120.0


def proximity_penalty(d, d_prox: float, beta: float):
    """beta * (d - d_prox)^2 below d_prox, zero at and above it."""
    d = np.asarray(d, dtype=np.float64)
    return np.where(d < d_prox, beta * (d - d_prox) ** 2, 0.0)


def pairwise_distances(q: np.ndarray) -> np.ndarray:
    diff = q[:, None, :] - q[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def navigation_cost(
    positions,
    goals,
    controls,
    d_prox: float = 0.5,
    beta: float = 1.0,
    state_weight: float = 1.0,
    control_weight: float = 1.0,
    terminal: bool = False,
    terminal_weight: float = 100.0,
    terminal_positions=None,
) -> np.ndarray:
    """Stage cost per robot.

    ``state_weight*|p - g|^2 + control_weight*|u|^2 + sum_j C(d_ij)``; when
    ``terminal`` is set, ``terminal_weight*|p(K) - g|^2`` evaluated at
    ``terminal_positions`` is added.
    """
    q = np.asarray(positions, dtype=np.float64)
    g = np.asarray(goals, dtype=np.float64)
    u = np.asarray(controls, dtype=np.float64)
    err = q - g
    cost = state_weight * (err * err).sum(axis=1) + control_weight * (u * u).sum(axis=1)
    pen = proximity_penalty(pairwise_distances(q), d_prox, beta)
    np.fill_diagonal(pen, 0.0)
    cost = cost + pen.sum(axis=1)
    if terminal:
        qk = q if terminal_positions is None else np.asarray(terminal_positions, dtype=np.float64)
        ek = qk - g
        cost = cost + terminal_weight * (ek * ek).sum(axis=1)
    return cost


class UnicycleNavigationGame(MultiTeamGame):
    def __init__(self, config: NavigationConfig | None = None):
        super().__init__()
        self.config = cfg = config or NavigationConfig()
        self.spec = TeamSpec((1,) * cfg.n_agents, 4, 2)
        self.horizon = int(cfg.horizon)
        self.action_low = np.array([-cfg.v_max, -cfg.omega_max])
        self.action_high = np.array([cfg.v_max, cfg.omega_max])
        self.team_of = self.spec.team_of
        self.pose = np.zeros((cfg.n_agents, 3))
        self.goals = np.zeros((cfg.n_agents, 2))

    def observe(self, pose: np.ndarray) -> np.ndarray:
        err = pose[:, :2] - self.goals
        c, s = np.cos(pose[:, 2]), np.sin(pose[:, 2])
        fwd = c * err[:, 0] + s * err[:, 1]
        lat = -s * err[:, 0] + c * err[:, 1]
        return np.column_stack([err, fwd, lat])

    def positions(self, state):
        return np.asarray(state)[:, :2] + self.goals

    def make_graph(self, state, k):
        return proximity_graph(self.positions(state), self.config.r_comm, self.team_of, k)

    def _reset(self, seed):
        cfg = self.config
        rng = np.random.default_rng(seed)
        n = cfg.n_agents
        base = 2.0 * np.pi * np.arange(n) / n
        phi = base + rng.uniform(-cfg.angle_jitter, cfg.angle_jitter, n)
        rad = cfg.ring_radius + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter, n)
        gphi = base + np.deg2rad(cfg.goal_rotation_deg) + rng.uniform(-cfg.angle_jitter, cfg.angle_jitter, n)
        grad = cfg.ring_radius + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter, n)
        heading = rng.uniform(-np.pi, np.pi, n)
        self.pose = np.column_stack([rad * np.cos(phi), rad * np.sin(phi), heading])
        self.goals = np.column_stack([grad * np.cos(gphi), grad * np.sin(gphi)])
        return self.observe(self.pose)

    @staticmethod
    def integrate(pose: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
        """One explicit-Euler unicycle step; position uses the pre-step heading."""
        x, y, th = pose[:, 0], pose[:, 1], pose[:, 2]
        v, w = u[:, 0], u[:, 1]
        th_next = np.arctan2(np.sin(th + w * dt), np.cos(th + w * dt))
        return np.column_stack([x + v * dt * np.cos(th), y + v * dt * np.sin(th), th_next])

    def _step(self, u):
        cfg = self.config
        q = self.pose[:, :2].copy()
        self.pose = self.integrate(self.pose, u, cfg.dt)
        last = self.k + 1 == self.horizon
        costs = navigation_cost(
            q,
            self.goals,
            u,
            cfg.d_prox,
            cfg.beta,
            cfg.state_weight,
            cfg.control_weight,
            terminal=last,
            terminal_weight=cfg.terminal_weight,
            terminal_positions=self.pose[:, :2],
        )
        dist = pairwise_distances(q)
        np.fill_diagonal(dist, np.inf)
        info = {
            "positions": q,
            "proximity_active": bool((dist < cfg.d_prox).any()),
        }
        return self.observe(self.pose), costs, info
