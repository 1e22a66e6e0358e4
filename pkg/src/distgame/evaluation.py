"""Deterministic evaluation rollouts and per-game summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import GainSchedule, LinearSystem, episode_seeds, rollout_cost
from .games.core import MultiTeamGame


@dataclass
class EpisodeLog:
    seed: int
    states: np.ndarray  # (K+1, M, X)
    positions: np.ndarray  # (K+1, M, P)
    actions: np.ndarray  # (K, M, U), after clamping
    costs: np.ndarray  # (K, N)
    infos: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.costs.shape[0]

    def total_cost(self) -> np.ndarray:
        return self.costs.sum(axis=0)

    def trajectory_records(self, episode: int, team_of) -> list[dict]:
        """One record per (step, agent): pre-step state, applied action and the agent's team cost."""
        rows = []
        for k in range(self.steps):
            for a, t in enumerate(team_of):
                rows.append(
                    {
                        "episode": episode,
                        "step": k,
                        "agent": a,
                        "team": int(t),
                        "state": self.states[k, a].tolist(),
                        "action": self.actions[k, a].tolist(),
                        "cost": float(self.costs[k, t]),
                    }
                )
        return rows


def play_episodes(
    make_env: Callable[[], MultiTeamGame],
    policies: dict,
    seeds: Sequence[int],
    rng_seed: int = 0,
) -> list[EpisodeLog]:
    """Run one episode per seed in lockstep, every team acting deterministically.

    Policies that are random by nature (e.g. uniform-random actions) draw from
    ``default_rng(rng_seed)``, so the whole call is reproducible.
    """
    if len(seeds) == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    envs = [make_env() for _ in seeds]
    spec = envs[0].spec
    first = [env.reset(s) for env, s in zip(envs, seeds)]
    states = np.stack([s for s, _ in first])
    graphs = [g for _, g in first]
    horizon = envs[0].horizon
    S = [states.copy()]
    P = [np.stack([env.positions(s) for env, s in zip(envs, states)])]
    A, C, I = [], [], []
    alive = np.ones(len(envs), dtype=bool)
    for _ in range(horizon):
        if not alive.any():
            break
        actions = np.zeros((len(envs), spec.n_agents, spec.action_dim))
        for team in range(spec.n_teams):
            u, _, _ = policies[team].act(states, graphs, rng=rng, deterministic=True)
            actions[:, spec.team_slice(team)] = u
        costs = np.zeros((len(envs), spec.n_teams))
        applied = np.zeros_like(actions)
        infos = []
        for e, env in enumerate(envs):
            if not alive[e]:
                infos.append({})
                continue
            res = env.step(actions[e])
            states[e] = res.state
            graphs[e] = res.graph
            costs[e] = res.costs
            applied[e] = res.info["applied_actions"]
            infos.append(res.info)
            alive[e] = not res.done
        S.append(states.copy())
        P.append(np.stack([env.positions(s) for env, s in zip(envs, states)]))
        A.append(applied)
        C.append(costs)
        I.append(infos)
    S, P, A, C = (np.stack(v, axis=1) for v in (S, P, A, C))
    return [
        EpisodeLog(int(seeds[e]), S[e], P[e], A[e], C[e], [step[e] for step in I])
        for e in range(len(envs))
    ]


# -- LQR ----------------------------------------------------------------------


def lqr_policy_cost(make_env, policies, episodes: int, seed: int = 0) -> np.ndarray:
    """Per-episode unmasked quadratic cost of the deterministic joint policy.

    Episode seeds come from ``episode_seeds(seed, episodes)``, the same ones
    ``lqr_riccati_cost`` uses, so the two are compared on common noise.
    """
    logs = play_episodes(make_env, policies, episode_seeds(seed, episodes))
    return np.array([sum(info["true_cost"] for info in log.infos) for log in logs])


def lqr_riccati_cost(env, schedule: GainSchedule, episodes: int, seed: int = 0) -> np.ndarray:
    system = LinearSystem(env.A, env.B, env.config.noise_bound)
    return rollout_cost(
        system, schedule, env.M, env.R, env.horizon, episode_seeds(seed, episodes), env.config.x0_bound
    )


# -- navigation ---------------------------------------------------------------


@dataclass
class NavigationSummary:
    success_rate: float
    proximity_active_fraction: float
    final_errors: np.ndarray  # (episodes, agents)


def navigation_summary(logs: Sequence[EpisodeLog], tolerance: float = 0.15) -> NavigationSummary:
    """Goal reach (all agents within ``tolerance`` at the final step) and penalty activity."""
    if not logs:
        return NavigationSummary(0.0, 0.0, np.zeros((0, 0)))
    final = np.stack([np.sqrt((log.states[-1][:, :2] ** 2).sum(axis=1)) for log in logs])
    success = float(np.mean(np.all(final <= tolerance, axis=1)))
    active = np.concatenate([[info["proximity_active"] for info in log.infos] for log in logs])
    return NavigationSummary(success, float(np.mean(active)), final)
