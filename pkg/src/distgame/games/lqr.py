"""Distributed linear-quadratic regulation game with scalar agents.

Dynamics ``x_i(k) = x_i(k-1) + b_i u_i(k-1) + w(k)`` with ``w ~ U[-1e-3, 1e-3]``
per agent, initial states uniform in ``[-0.1, 0.1]``, and a quadratic cost
with random positive definite ``M(k)``, ``R(k)`` whose spectra are uniform in
``[0.2, 1.0]``.

Everything tied to the game instance (``b``, ``M(k)``, ``R(k)``, the random
topology) is drawn from ``instance_seed``; ``reset(seed)`` only draws the
initial state and the process noise, so two environments built from the
same config share one instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CommGraph,
    GameContractError,
    MultiTeamGame,
    TeamSpec,
    complete_graph,
    proximity_graph,
    random_sparse_graph,
)


@dataclass
class LQRConfig:
    n_teams: int = 5
    agents_per_team: int = 1
    horizon: int = 30
    instance_seed: int = 0
    x0_bound: float = 0.1
    noise_bound: float = 1e-3
    b_low: float = 0.0
    b_high: float = 1.0
    eig_low: float = 0.2
    eig_high: float = 1.0
    time_varying_costs: bool = True
    topology: str = "complete"  # complete | random_sparse
    density: float = 0.3
    mask_cost: bool = False
    policy_graph: str = "topology"  # topology | proximity
    proximity_radius: float = 0.2
    cost_attribution: str = "shared"  # shared | rows
    action_bound: float = 10.0


def random_pd_matrix(rng: np.random.Generator, n: int, low: float = 0.2, high: float = 1.0) -> np.ndarray:
    """Q diag(lam) Q^T with Q from the QR of a Gaussian matrix, lam ~ U[low, high]."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    lam = rng.uniform(low, high, size=n)
    m = (q * lam) @ q.T
    return 0.5 * (m + m.T)


def check_pd(name: str, m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-12):
        raise GameContractError(f"{name} must be a symmetric square matrix")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise GameContractError(f"{name} is not positive definite") from None


def lqr_cost(x, u, M, R, W, team_of, attribution: str = "rows", check: bool = False) -> np.ndarray:
    """Per-team quadratic cost with the masked matrices ``M*W`` and ``R*W``.

    ``rows`` gives each team the rows of ``x^T (M*W) x + u^T (R*W) u`` owned by
    its agents, so team costs add up to the full form. ``shared`` gives every
    team the full form.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if check:
        check_pd("M", M)
        check_pd("R", R)
    mw = M * W
    rw = R * W
    per_agent = x * (mw @ x) + u * (rw @ u)
    team_of = np.asarray(team_of)
    n_teams = int(team_of.max()) + 1
    if attribution == "rows":
        return np.bincount(team_of, weights=per_agent, minlength=n_teams)
    if attribution == "shared":
        return np.full(n_teams, per_agent.sum())
    raise GameContractError(f"unknown cost attribution {attribution!r}")


class LinearQuadraticGame(MultiTeamGame):
    def __init__(self, config: LQRConfig | None = None):
        super().__init__()
        self.config = cfg = config or LQRConfig()
        if cfg.topology not in ("complete", "random_sparse"):
            raise GameContractError(f"unknown topology {cfg.topology!r}")
        if cfg.policy_graph not in ("topology", "proximity"):
            raise GameContractError(f"unknown policy graph {cfg.policy_graph!r}")
        self.spec = TeamSpec((cfg.agents_per_team,) * cfg.n_teams, 1, 1)
        self.horizon = int(cfg.horizon)
        n = self.spec.n_agents
        self.action_low = np.full(1, -cfg.action_bound)
        self.action_high = np.full(1, cfg.action_bound)
        self.team_of = self.spec.team_of

        rng = np.random.default_rng(cfg.instance_seed)
        self.b = rng.uniform(cfg.b_low, cfg.b_high, size=n)
        if cfg.time_varying_costs:
            self.M = [random_pd_matrix(rng, n, cfg.eig_low, cfg.eig_high) for _ in range(self.horizon + 1)]
            self.R = [random_pd_matrix(rng, n, cfg.eig_low, cfg.eig_high) for _ in range(self.horizon)]
        else:
            m0 = random_pd_matrix(rng, n, cfg.eig_low, cfg.eig_high)
            r0 = random_pd_matrix(rng, n, cfg.eig_low, cfg.eig_high)
            self.M = [m0] * (self.horizon + 1)
            self.R = [r0] * self.horizon
        for k, m in enumerate(self.M):
            check_pd(f"M({k})", m)
        for k, r in enumerate(self.R):
            check_pd(f"R({k})", r)
        if cfg.topology == "complete":
            self.topology = [complete_graph(n, self.team_of, k) for k in range(self.horizon + 1)]
        else:
            self.topology = [
                random_sparse_graph(cfg.instance_seed, k, n, cfg.density, self.team_of)
                for k in range(self.horizon + 1)
            ]
        self._rng: np.random.Generator | None = None

    # known-model views used by the baselines
    @property
    def A(self) -> np.ndarray:
        return np.eye(self.spec.n_agents)

    @property
    def B(self) -> np.ndarray:
        return np.diag(self.b)

    def cost_mask(self, k: int) -> np.ndarray:
        if self.config.mask_cost:
            return self.topology[k].weight_matrix()
        return np.ones((self.spec.n_agents,) * 2)

    def positions(self, state):
        return np.asarray(state).reshape(-1, 1)

    def make_graph(self, state, k):
        if self.config.policy_graph == "proximity":
            return proximity_graph(state.reshape(-1, 1), self.config.proximity_radius, self.team_of, k)
        return self.topology[min(k, self.horizon)]

    def _reset(self, seed):
        self._rng = np.random.default_rng(seed)
        x0 = self._rng.uniform(-self.config.x0_bound, self.config.x0_bound, size=self.spec.n_agents)
        return x0.reshape(-1, 1)

    def _step(self, u):
        k = self.k
        x = self.state.reshape(-1)
        uu = u.reshape(-1)
        attribution = self.config.cost_attribution
        ones = np.ones((self.spec.n_agents,) * 2)
        costs = lqr_cost(x, uu, self.M[k], self.R[k], self.cost_mask(k), self.team_of, attribution)
        true = lqr_cost(x, uu, self.M[k], self.R[k], ones, self.team_of, "rows").sum()
        noise = self._rng.uniform(-self.config.noise_bound, self.config.noise_bound, size=x.shape)
        x_next = x + self.b * uu + noise
        if k + 1 == self.horizon:
            zero = np.zeros_like(uu)
            costs = costs + lqr_cost(
                x_next, zero, self.M[k + 1], self.R[k], self.cost_mask(k + 1), self.team_of, attribution
            )
            true += lqr_cost(x_next, zero, self.M[k + 1], self.R[k], ones, self.team_of, "rows").sum()
        return x_next.reshape(-1, 1), costs, {"true_cost": float(true)}
