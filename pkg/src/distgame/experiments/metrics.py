"""Pursuit-evasion metrics, per-step records and tournament tables."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

CATCH_RADIUS = 0.125


@dataclass
class EpisodeMetrics:
    """Summary of one episode.

    ``avg_min_distance_per_evader[e]`` is (1/K) sum_k min_p |q_e(k) - q_p(k)|;
    ``avg_min_distance`` averages it over evaders. ``catches`` counts one per
    evader per step whose nearest pursuer is within the catch radius.
    """

    avg_min_distance: float
    avg_min_distance_per_evader: list[float]
    catches: int
    cumulative_reward: list[float]
    steps: int


@dataclass
class MetricRecord:
    """One step of one episode; cumulative fields are prefix sums."""

    episode: int
    step: int
    reward: list[float]
    cumulative_reward: list[float]
    min_distance: float
    catches: int
    cumulative_catches: int


def min_distances(pursuer_pos: np.ndarray, evader_pos: np.ndarray) -> np.ndarray:
    """(K, P, 2), (K, E, 2) -> (K, E) distance from each evader to its nearest pursuer."""
    p = np.asarray(pursuer_pos, dtype=np.float64)
    e = np.asarray(evader_pos, dtype=np.float64)
    d = np.sqrt(((e[:, :, None, :] - p[:, None, :, :]) ** 2).sum(axis=-1))
    return d.min(axis=2)


def compute_metrics(pursuer_pos, evader_pos, rewards, catch_radius: float = CATCH_RADIUS) -> EpisodeMetrics:
    """Metrics from positions at the K scored steps and the (K, N) team rewards."""
    rewards = np.asarray(rewards, dtype=np.float64)
    steps = rewards.shape[0]
    if steps == 0:
        n_e = np.asarray(evader_pos).shape[1] if np.ndim(evader_pos) == 3 else 0
        return EpisodeMetrics(0.0, [0.0] * n_e, 0, [0.0] * rewards.shape[-1], 0)
    dmin = min_distances(pursuer_pos, evader_pos)
    per_evader = dmin.mean(axis=0)
    return EpisodeMetrics(
        avg_min_distance=float(per_evader.mean()),
        avg_min_distance_per_evader=per_evader.tolist(),
        catches=int((dmin <= catch_radius).sum()),
        cumulative_reward=rewards.sum(axis=0).tolist(),
        steps=steps,
    )


def metric_records(episode: int, pursuer_pos, evader_pos, rewards, catch_radius: float = CATCH_RADIUS) -> list[MetricRecord]:
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape[0] == 0:
        return []
    dmin = min_distances(pursuer_pos, evader_pos)
    caught = (dmin <= catch_radius).sum(axis=1)
    cum = np.cumsum(rewards, axis=0)
    cum_caught = np.cumsum(caught)
    return [
        MetricRecord(
            episode, k, rewards[k].tolist(), cum[k].tolist(), float(dmin[k].mean()), int(caught[k]), int(cum_caught[k])
        )
        for k in range(rewards.shape[0])
    ]


def summarize(values: Sequence[float]) -> tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class TournamentResult:
    """Round-robin results; every aggregate is recomputable from ``episodes``.

    ``episodes[(i, j)]`` lists the per-episode metrics of pursuer policy i
    against evader policy j.
    """

    pursuers: list[str]
    evaders: list[str]
    episodes: dict = field(default_factory=dict)
    n_episodes: int = 0

    @property
    def empty(self) -> bool:
        return self.n_episodes == 0

    def matrix(self, metric: str) -> tuple[np.ndarray, np.ndarray]:
        """Mean and std matrices (pursuers x evaders) over episodes.

        ``metric`` is ``min_distance`` (episode value averaged over evaders),
        ``min_distance_per_evader`` (pooled over episodes and evaders),
        ``catches``, ``pursuer_reward`` or ``evader_reward``.
        """
        mean = np.full((len(self.pursuers), len(self.evaders)), np.nan)
        std = np.full_like(mean, np.nan)
        for (i, j), eps in self.episodes.items():
            mean[i, j], std[i, j] = summarize(_metric_values(eps, metric))
        return mean, std

    def to_dict(self) -> dict:
        tables = {}
        for m in ("min_distance", "min_distance_per_evader", "catches", "pursuer_reward", "evader_reward"):
            mean, std = self.matrix(m)
            tables[m] = {"mean": mean.tolist(), "std": std.tolist()}
        return {
            "pursuers": self.pursuers,
            "evaders": self.evaders,
            "episodes_per_pairing": self.n_episodes,
            "tables": tables,
        }

    def episode_rows(self) -> list[dict]:
        rows = []
        for (i, j), eps in sorted(self.episodes.items()):
            for n, m in enumerate(eps):
                rows.append({"pursuer": self.pursuers[i], "evader": self.evaders[j], "episode": n, **asdict(m)})
        return rows


def _metric_values(eps: Sequence[EpisodeMetrics], metric: str) -> list[float]:
    if metric == "min_distance":
        return [m.avg_min_distance for m in eps]
    if metric == "min_distance_per_evader":
        return [v for m in eps for v in m.avg_min_distance_per_evader]
    if metric == "catches":
        return [m.catches for m in eps]
    if metric == "pursuer_reward":
        return [m.cumulative_reward[0] for m in eps]
    if metric == "evader_reward":
        return [m.cumulative_reward[1] for m in eps]
    raise KeyError(f"unknown metric {metric!r}")
