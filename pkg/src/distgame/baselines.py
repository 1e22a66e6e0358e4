"""Linear-quadratic baselines: Riccati recursions and a zeroth-order gain learner."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class LinearSystem:
    """x(k+1) = A x(k) + B u(k) + w,  w ~ U[-noise_bound, noise_bound] per coordinate."""

    A: np.ndarray
    B: np.ndarray
    noise_bound: float = 0.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise ValueError(f"inconsistent dims A{self.A.shape} B{self.B.shape}")

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]


@dataclass
class GainSchedule:
    """Feedback gains u(k) = -K(k) x(k); a stationary gain repeats one matrix."""

    gains: list[np.ndarray]
    stationary: bool = False

    def at(self, k: int) -> np.ndarray:
        return self.gains[0] if self.stationary else self.gains[k]

    @property
    def horizon(self) -> int:
        return np.inf if self.stationary else len(self.gains)


def _mat(m) -> np.ndarray:
    return np.atleast_2d(np.asarray(m, dtype=np.float64))


def riccati_finite(system: LinearSystem, Ms: Sequence, Rs: Sequence, horizon: int) -> GainSchedule:
    """Backward recursion for sum_{k<K} (x'M(k)x + u'R(k)u) + x(K)'M(K)x(K).

    ``Ms`` holds K+1 matrices (the last one is terminal), ``Rs`` holds K.
    """
    if len(Ms) < horizon + 1 or len(Rs) < horizon:
        raise ValueError("need K+1 state weights and K input weights")
    A, B = system.A, system.B
    P = _mat(Ms[horizon])
    gains = [None] * horizon
    for k in range(horizon - 1, -1, -1):
        S = _mat(Rs[k]) + B.T @ P @ B
        try:
            K = np.linalg.solve(S, B.T @ P @ A)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError(f"singular R + B'PB at step {k}") from exc
        P = _mat(Ms[k]) + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        gains[k] = K
    return GainSchedule(gains)


def riccati_map(P: np.ndarray, A, B, M, R) -> np.ndarray:
    BtPA = B.T @ P @ A
    return M + A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA)


def dare_stationary(system: LinearSystem, M, R, tol: float = 1e-12, max_iter: int = 100_000):
    """Fixed-point iteration of the Riccati map; returns (P, K)."""
    A, B = system.A, system.B
    M, R = _mat(M), _mat(R)
    P = M.copy()
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            P_next = riccati_map(P, A, B, M, R)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            break
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P_next))):
            P = P_next
            K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            return P, K
        P = P_next
    raise DivergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def episode_seeds(seed: int, episodes: int) -> list[int]:
    """Per-episode reset seeds derived from one master seed."""
    ss = np.random.SeedSequence(int(seed))
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in ss.spawn(episodes)]


def rollout_cost(
    system: LinearSystem,
    schedule: GainSchedule,
    Ms: Sequence,
    Rs: Sequence,
    horizon: int,
    seeds: Sequence[int],
    x0_bound: float = 0.1,
) -> np.ndarray:
    """Per-episode cost of u = -K(k)x(k).

    Each episode draws x(0) ~ U[-x0_bound, x0_bound] and then one noise vector
    per step from ``default_rng(seed)``, the same order the LQR game uses, so
    passing the game's reset seeds gives common random numbers.
    """
    n = system.n_states
    A, B = system.A, system.B
    costs = np.zeros(len(seeds))
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        x = rng.uniform(-x0_bound, x0_bound, size=n)
        total = 0.0
        for k in range(horizon):
            u = -schedule.at(k) @ x
            total += x @ _mat(Ms[k]) @ x + u @ _mat(Rs[k]) @ u
            w = rng.uniform(-system.noise_bound, system.noise_bound, size=n)
            x = A @ x + B @ u + w
        total += x @ _mat(Ms[horizon]) @ x
        costs[i] = total
    return costs


def evaluate_gain(
    system: LinearSystem,
    schedule: GainSchedule,
    Ms: Sequence,
    Rs: Sequence,
    episodes: int,
    seed: int = 0,
    horizon: int | None = None,
    x0_bound: float = 0.1,
) -> float:
    """Monte-Carlo mean cost over ``episodes`` noisy rollouts."""
    horizon = len(Rs) if horizon is None else horizon
    if not schedule.stationary and len(schedule.gains) < horizon:
        raise ValueError("gain schedule shorter than the horizon")
    if episodes == 0:
        return 0.0
    return float(rollout_cost(system, schedule, Ms, Rs, horizon, episode_seeds(seed, episodes), x0_bound).mean())


def batched_rollout_cost(system, gains: np.ndarray, Ms, Rs, x0: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Vectorized cost for a batch of gain schedules on shared samples.

    gains (G, K, m, n); x0 (S, n); noise (S, K, n). Returns (G,) mean costs.
    """
    A, B = system.A, system.B
    G, K = gains.shape[:2]
    x = np.broadcast_to(x0, (G,) + x0.shape).copy()  # (G, S, n)
    total = np.zeros((G, x0.shape[0]))
    for k in range(K):
        u = -np.einsum("gmn,gsn->gsm", gains[:, k], x)
        total += np.einsum("gsn,nm,gsm->gs", x, _mat(Ms[k]), x) + np.einsum("gsm,mp,gsp->gs", u, _mat(Rs[k]), u)
        x = x @ A.T + u @ B.T + noise[None, :, k]
    total += np.einsum("gsn,nm,gsm->gs", x, _mat(Ms[K]), x)
    return total.mean(axis=1)


def two_point_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, radius: float, rng, directions: int = 1, mask=None):
    """Average of (f(t + r z) - f(t - r z)) / (2r) * z over Gaussian directions z.

    With ``mask`` the directions, and therefore the estimate, live on the
    masked subspace.
    """
    g = np.zeros_like(theta, dtype=np.float64)
    for _ in range(directions):
        z = rng.standard_normal(theta.shape)
        if mask is not None:
            z = z * mask
        g += (f(theta + radius * z) - f(theta - radius * z)) / (2.0 * radius) * z
    return g / directions


@dataclass
class ZerothOrderConfig:
    iterations: int = 2000
    lr: float = 1.0
    radius: float = 0.01
    directions: int = 8
    batch_episodes: int = 32
    eval_episodes: int = 0
    divergence_cost: float = 1e6
    seed: int = 0
    x0_bound: float = 0.1


@dataclass
class ZerothOrderResult:
    schedule: GainSchedule
    curve: list[float]
    diverged: bool = False
    iterates_masked: bool = True
    history: list[np.ndarray] = field(default_factory=list)


def zeroth_order_learn(
    system: LinearSystem,
    Ms: Sequence,
    Rs: Sequence,
    masks: Sequence[np.ndarray],
    config: ZerothOrderConfig | None = None,
    keep_history: bool = False,
) -> ZerothOrderResult:
    """Learn a time-varying gain schedule restricted to the support of ``masks``.

    Each iteration samples a fresh batch of initial states and noise, forms a
    two-point Gaussian-smoothing gradient of the sampled cost (both
    evaluations share the batch), zeroes it off the mask, and takes a
    gradient step. ``curve`` records the batch cost of the current gains, one
    entry per gradient step.
    """
    cfg = config or ZerothOrderConfig()
    horizon = len(Rs)
    n, m = system.n_states, system.n_inputs
    mask = np.stack([np.asarray(masks[k], dtype=np.float64)[:m, :n] for k in range(horizon)])
    rng = np.random.default_rng(cfg.seed)
    theta = np.zeros((horizon, m, n))
    curve: list[float] = []
    history = []
    diverged = False
    masked = True
    off = mask == 0
    for it in range(cfg.iterations):
        x0 = rng.uniform(-cfg.x0_bound, cfg.x0_bound, size=(cfg.batch_episodes, n))
        noise = rng.uniform(-system.noise_bound, system.noise_bound, size=(cfg.batch_episodes, horizon, n))
        zs = rng.standard_normal((cfg.directions, horizon, m, n)) * mask
        probes = np.concatenate([theta + cfg.radius * zs, theta - cfg.radius * zs, theta[None]])
        costs = batched_rollout_cost(system, probes, Ms, Rs, x0, noise)
        current = float(costs[-1])
        curve.append(current)
        if not np.isfinite(current) or current > cfg.divergence_cost:
            log.warning("zeroth-order learner diverged at iteration %d (cost %.3g)", it, current)
            diverged = True
            break
        diffs = (costs[: cfg.directions] - costs[cfg.directions : 2 * cfg.directions]) / (2.0 * cfg.radius)
        grad = np.einsum("d,dkmn->kmn", diffs, zs) / cfg.directions
        theta = (theta - cfg.lr * grad) * mask
        masked = masked and not np.any(theta[off])
        if keep_history:
            history.append(theta.copy())
    return ZerothOrderResult(GainSchedule(list(theta)), curve, diverged, masked, history)
