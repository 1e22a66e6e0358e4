"""Simultaneous multi-team policy-gradient training (clipped-surrogate PPO).

One iteration rolls out ``episodes_per_iteration`` games in lockstep with
the stochastic policies, scores every step with per-team GAE advantages
computed from a per-team critic, and then updates each trainable team on
its own samples only. Costs become rewards by a single sign flip when the
buffer is built.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .games.core import CommGraph, MultiTeamGame
from .policy import AttentionTeamPolicy, gaussian_entropy, gaussian_log_prob, log_std, mean_action
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 100
    episodes_per_iteration: int = 16
    lr: float = 3e-4
    critic_lr: float | None = None
    optimizer: str = "sgd"  # sgd | adam
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 512
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    critic_widths: tuple[int, ...] = (64, 64)
    critic_epochs: int | None = None
    target_kl: float | None = None
    lr_schedule: str = "constant"  # constant | linear
    checkpoint_every: int = 0
    seed: int = 0
    frozen_teams: tuple[int, ...] = ()

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise TrainConfigError("learning rate must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise TrainConfigError("discount must satisfy 0 < gamma < 1")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise TrainConfigError("GAE lambda must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise TrainConfigError("clip epsilon must be positive")
        if self.iterations < 0 or self.episodes_per_iteration < 1 or self.epochs < 1:
            raise TrainConfigError("iterations >= 0, episodes >= 1 and epochs >= 1 required")
        if self.optimizer not in ("sgd", "adam"):
            raise TrainConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "linear"):
            raise TrainConfigError(f"unknown learning-rate schedule {self.lr_schedule!r}")
        return self


# -- optimizers ---------------------------------------------------------------


class SGD:
    """theta <- theta - lr * grad."""

    def __init__(self, params: Sequence[Tensor], lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class Adam(SGD):
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * p.grad
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * p.grad * p.grad
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def state_arrays(self):
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i in range(len(self.params)):
            out[f"m{i}"] = self.m[i]
            out[f"v{i}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        self.m = [np.array(arrays[f"m{i}"]) for i in range(len(self.params))]
        self.v = [np.array(arrays[f"v{i}"]) for i in range(len(self.params))]


def make_optimizer(kind: str, params, lr: float):
    return Adam(params, lr) if kind == "adam" else SGD(params, lr)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    norm = T.parameters_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        f = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * f
    return norm


# -- critic ---------------------------------------------------------------------


class RunningStats:
    """Batch-merged mean/variance (Chan et al. parallel update)."""

    def __init__(self, shape=()):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = 0.0

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        if n == 0:
            return
        bm, bv = x.mean(axis=0), x.var(axis=0)
        tot = self.count + n
        delta = bm - self.mean
        self.mean = self.mean + delta * n / tot
        self.var = (self.var * self.count + bv * n + delta**2 * self.count * n / tot) / tot
        self.count = tot

    @property
    def std(self):
        return np.sqrt(np.maximum(self.var, 1e-12))

    def arrays(self, prefix):
        return {f"{prefix}mean": np.atleast_1d(self.mean), f"{prefix}var": np.atleast_1d(self.var), f"{prefix}count": np.array([self.count])}

    def load(self, arrays, prefix):
        shape = np.shape(self.mean)
        self.mean = np.asarray(arrays[f"{prefix}mean"]).reshape(shape)
        self.var = np.asarray(arrays[f"{prefix}var"]).reshape(shape)
        self.count = float(arrays[f"{prefix}count"][0])


class Critic:
    """Per-team value network on the global state stack plus the time fraction k/K.

    Inputs are standardized with running statistics and the network regresses
    standardized returns; ``predict`` undoes both.
    """

    def __init__(self, input_dim: int, widths=(64, 64), rng=None):
        rng = np.random.default_rng(rng)
        self.input_dim = int(input_dim)
        dims = [self.input_dim] + list(widths) + [1]
        self.weights = []
        for i in range(len(dims) - 1):
            bound = 1.0 / np.sqrt(dims[i])
            w = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i] + 1))
            w[:, -1] = 0.0
            self.weights.append(Tensor(w, requires_grad=True))
        self.obs_stats = RunningStats((self.input_dim,))
        self.ret_stats = RunningStats(())

    def parameters(self):
        return list(self.weights)

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return np.clip((x - self.obs_stats.mean) / self.obs_stats.std, -10.0, 10.0)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        ones = Tensor(np.ones((x.shape[0], 1)))
        for i, w in enumerate(self.weights):
            h = T.matmul(T.concat([h, ones], axis=1), T.transpose(w))
            if i < len(self.weights) - 1:
                h = T.tanh_elem(h)
        return T.reshape(h, (x.shape[0],))

    def predict(self, x: np.ndarray) -> np.ndarray:
        with T.no_grad():
            out = self.forward(Tensor(self.normalize_inputs(x))).data
        return out * self.ret_stats.std + self.ret_stats.mean

    def state_arrays(self, prefix=""):
        out = {f"{prefix}w{i}": w.data for i, w in enumerate(self.weights)}
        out.update(self.obs_stats.arrays(prefix + "obs_"))
        out.update(self.ret_stats.arrays(prefix + "ret_"))
        return out

    def load_state_arrays(self, arrays, prefix=""):
        for i, w in enumerate(self.weights):
            w.data = np.array(arrays[f"{prefix}w{i}"])
        self.obs_stats.load(arrays, prefix + "obs_")
        self.ret_stats.load(arrays, prefix + "ret_")


def critic_inputs(states: np.ndarray, steps: np.ndarray, horizon: int) -> np.ndarray:
    """(..., M, X) states and matching step indices -> (..., M*X + 1)."""
    flat = states.reshape(states.shape[:-2] + (-1,))
    tfrac = (np.asarray(steps, dtype=np.float64) / horizon)[..., None]
    return np.concatenate([flat, np.broadcast_to(tfrac, flat.shape[:-1] + (1,))], axis=-1)


# -- rollouts -------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    """Lockstep rollouts of E environments over T steps.

    Arrays are indexed (t, e, ...). ``rewards`` are negated team costs.
    ``samples[t][team]`` keeps the policy inputs used at sampling time.
    """

    states: np.ndarray  # (T, E, M, X)
    actions: np.ndarray  # (T, E, M, U) as sampled (before clamping)
    log_probs: np.ndarray  # (T, E, M)
    costs: np.ndarray  # (T, E, N)
    terminated: np.ndarray  # (T, E)
    truncated: np.ndarray  # (T, E)
    valid: np.ndarray  # (T, E)
    final_states: np.ndarray  # (E, M, X)
    graphs: list[list[CommGraph]]
    samples: list[dict]
    seeds: list[int]
    horizon: int
    infos: list[list[dict]] = field(default_factory=list)
    values: np.ndarray | None = None  # (T, E, N)
    last_values: np.ndarray | None = None  # (E, N)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    norm_advantages: np.ndarray | None = None

    @property
    def rewards(self) -> np.ndarray:
        return -self.costs

    @property
    def n_steps(self) -> int:
        return int(self.valid.sum())

    def episode_costs(self) -> np.ndarray:
        """Undiscounted cost per (episode, team)."""
        return (self.costs * self.valid[..., None]).sum(axis=0)

    def clear(self) -> None:
        self.samples = []
        self.graphs = []
        self.infos = []


def collect_rollouts(
    envs: Sequence[MultiTeamGame],
    policies: dict,
    rng: np.random.Generator,
    trainable: Sequence[int] = (),
    team_rngs: dict | None = None,
    seeds: Sequence[int] | None = None,
    keep_infos: bool = False,
) -> RolloutBuffer:
    """Play one episode in every env; trainable teams sample, the rest act as they act.

    Reset seeds come from ``rng`` unless given. Action noise for team i comes
    from ``team_rngs[i]`` (default: ``rng``).
    """
    n_env = len(envs)
    spec = envs[0].spec
    horizon = envs[0].horizon
    if seeds is None:
        seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=n_env)]
    team_rngs = team_rngs or {}
    states = np.stack([env.reset(s)[0] for env, s in zip(envs, seeds)])
    graphs = [env.graph for env in envs]
    M, X, U, N = spec.n_agents, spec.state_dim, spec.action_dim, spec.n_teams
    S = np.zeros((horizon, n_env, M, X))
    A = np.zeros((horizon, n_env, M, U))
    LP = np.zeros((horizon, n_env, M))
    C = np.zeros((horizon, n_env, N))
    term = np.zeros((horizon, n_env), dtype=bool)
    trunc = np.zeros((horizon, n_env), dtype=bool)
    valid = np.zeros((horizon, n_env), dtype=bool)
    alive = np.ones(n_env, dtype=bool)
    all_graphs, all_samples, all_infos = [], [], []
    t_used = 0
    for t in range(horizon):
        if not alive.any():
            break
        t_used = t + 1
        S[t] = states
        all_graphs.append(list(graphs))
        step_samples = {}
        for team in range(N):
            pol = policies[team]
            sample = team in trainable and getattr(pol, "stochastic_capable", False)
            trng = team_rngs.get(team, rng)
            u, lp, smp = pol.act(states, graphs, rng=trng, deterministic=not sample)
            A[t, :, spec.team_slice(team)] = u
            if lp is not None:
                LP[t, :, spec.team_slice(team)] = lp
            step_samples[team] = smp
        all_samples.append(step_samples)
        step_infos = []
        for e, env in enumerate(envs):
            if not alive[e]:
                step_infos.append({})
                continue
            res = env.step(A[t, e])
            valid[t, e] = True
            C[t, e] = res.costs
            states[e] = res.state
            graphs[e] = res.graph
            if res.done:
                alive[e] = False
                trunc[t, e] = res.truncated
                term[t, e] = not res.truncated
            step_infos.append(res.info if keep_infos else {})
        all_infos.append(step_infos)
    return RolloutBuffer(
        S[:t_used], A[:t_used], LP[:t_used], C[:t_used], term[:t_used], trunc[:t_used], valid[:t_used],
        states.copy(), all_graphs, all_samples, list(seeds), horizon, all_infos,
    )


def attach_values(buffer: RolloutBuffer, critics: dict, n_teams: int) -> None:
    """Critic values for every stored step and for the final states."""
    T_, E = buffer.valid.shape
    steps = np.broadcast_to(np.arange(T_)[:, None], (T_, E))
    inputs = critic_inputs(buffer.states, steps, buffer.horizon).reshape(T_ * E, -1)
    final_steps = buffer.valid.sum(axis=0)
    final_inputs = critic_inputs(buffer.final_states, final_steps, buffer.horizon)
    values = np.zeros((T_, E, n_teams))
    last = np.zeros((E, n_teams))
    for team, critic in critics.items():
        values[..., team] = critic.predict(inputs).reshape(T_, E)
        last[:, team] = critic.predict(final_inputs)
    buffer.values = values
    buffer.last_values = last


def compute_advantages(buffer: RolloutBuffer, gamma: float, lam: float, normalize: bool = True) -> RolloutBuffer:
    """GAE(gamma, lambda) on rewards = -costs.

    An episode that ends by completion bootstraps with 0; one cut by the
    horizon bootstraps with the critic's value of the final state.
    """
    rewards = buffer.rewards
    values = buffer.values if buffer.values is not None else np.zeros_like(rewards)
    last_values = buffer.last_values if buffer.last_values is not None else np.zeros(rewards.shape[1:])
    T_ = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    next_value = np.zeros(rewards.shape[1:])
    for t in range(T_ - 1, -1, -1):
        valid = buffer.valid[t][:, None]
        ended = (buffer.terminated[t] | buffer.truncated[t])[:, None]
        boot = np.where(buffer.truncated[t][:, None], last_values, 0.0)
        nv = np.where(ended, boot, next_value)
        delta = rewards[t] + gamma * nv - values[t]
        running = np.where(ended, delta, delta + gamma * lam * running)
        running = np.where(valid, running, 0.0)
        adv[t] = running
        next_value = np.where(valid, values[t], next_value)
    buffer.advantages = adv
    buffer.returns = adv + values
    if normalize:
        mask = buffer.valid
        norm = np.zeros_like(adv)
        for team in range(adv.shape[-1]):
            a = adv[..., team][mask]
            mu, sd = a.mean(), a.std()
            norm[..., team] = np.where(mask, (adv[..., team] - mu) / (sd + 1e-8), 0.0)
        buffer.norm_advantages = norm
    return buffer


# -- update ---------------------------------------------------------------------


@dataclass
class TeamBatch:
    """Flattened samples of one team, grouped by (role, neighbor count)."""

    groups: list[dict]
    n: int


def team_batch(buffer: RolloutBuffer, team: int, policy: AttentionTeamPolicy, advantages: np.ndarray) -> TeamBatch:
    spec = policy.spec
    sl = spec.team_slice(team)
    n_local = sl.stop - sl.start
    pieces: dict[tuple[int, int], dict[str, list]] = {}
    sample_id = 0
    for t, per_team in enumerate(buffer.samples):
        E = buffer.valid.shape[1]
        for grp, feats, gstates in per_team[team]:
            e_idx = grp.rows // n_local
            j_idx = grp.rows % n_local
            keep = buffer.valid[t, e_idx]
            if not keep.any():
                continue
            ids = (t * E + e_idx) * n_local + j_idx
            d = pieces.setdefault((grp.role, grp.n), {"F": [], "S": [], "A": [], "LP": [], "ADV": [], "ID": []})
            d["F"].append(feats[keep])
            d["S"].append(gstates[keep])
            d["A"].append(buffer.actions[t, e_idx[keep], sl.start + j_idx[keep]])
            d["LP"].append(buffer.log_probs[t, e_idx[keep], sl.start + j_idx[keep]])
            d["ADV"].append(advantages[t, e_idx[keep], team])
            d["ID"].append(ids[keep])
    groups = []
    for (role, n), d in sorted(pieces.items()):
        groups.append({"role": role, "n": n, **{k: np.concatenate(v) for k, v in d.items()}})
    # dense sample numbering 0..N-1 in (t, e, agent) order
    all_ids = np.sort(np.concatenate([g["ID"] for g in groups])) if groups else np.zeros(0, dtype=int)
    for g in groups:
        g["ID"] = np.searchsorted(all_ids, g["ID"])
    return TeamBatch(groups, int(all_ids.size))


def surrogate_loss(policy: AttentionTeamPolicy, groups: list[dict], clip_eps: float, entropy_coef: float, select=None):
    """Negative clipped surrogate (plus entropy bonus) averaged over the selected samples.

    Returns (loss Tensor, stats dict).
    """
    terms = []
    ent_terms = []
    count = 0
    kl_sum = 0.0
    clipped = 0
    ratio_dev = 0.0
    std_sum = 0.0
    for g in groups:
        idx = slice(None) if select is None else select[g["ID"]]
        feats = g["F"][idx]
        if feats.shape[0] == 0:
            continue
        params = policy.params[g["role"]]
        F = Tensor(feats)
        mu = mean_action(F, Tensor(g["S"][idx]), params)
        ls = log_std(F, params)
        lp = gaussian_log_prob(Tensor(g["A"][idx]), mu, ls)
        old = g["LP"][idx]
        adv = Tensor(g["ADV"][idx])
        ratio = T.exp_elem(T.sub(lp, Tensor(old)))
        s1 = T.mul(ratio, adv)
        s2 = T.mul(T.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), adv)
        terms.append(T.sum_all(T.minimum(s1, s2)))
        if entropy_coef:
            ent_terms.append(T.sum_all(gaussian_entropy(ls)))
        count += feats.shape[0]
        r = ratio.data
        kl_sum += float(np.sum(old - lp.data))
        clipped += int(np.sum(np.abs(r - 1.0) > clip_eps))
        ratio_dev = max(ratio_dev, float(np.max(np.abs(r - 1.0))))
        std_sum += float(np.exp(ls.data).mean(axis=1).sum())
    if count == 0:
        return None, {}
    total = terms[0]
    for t_ in terms[1:]:
        total = T.add(total, t_)
    loss = T.scale(total, -1.0 / count)
    if ent_terms:
        ent = ent_terms[0]
        for t_ in ent_terms[1:]:
            ent = T.add(ent, t_)
        loss = T.sub(loss, T.scale(ent, entropy_coef / count))
    stats = {
        "approx_kl": kl_sum / count,
        "clip_frac": clipped / count,
        "max_ratio_dev": ratio_dev,
        "policy_std": std_sum / count,
    }
    return loss, stats


def _snapshot(params):
    return [p.data.copy() for p in params]


def _restore(params, snap):
    for p, d in zip(params, snap):
        p.data = d


def ppo_update(
    buffer: RolloutBuffer,
    policies: dict,
    critics: dict,
    optimizers: dict,
    critic_optimizers: dict,
    config: TrainConfig,
    iteration: int = 0,
    trainable: Sequence[int] | None = None,
) -> dict:
    """Update every trainable team from its own samples; returns per-team stats."""
    spec = next(iter(policies.values())).spec
    trainable = [t for t in range(spec.n_teams) if t not in config.frozen_teams] if trainable is None else trainable
    adv = buffer.norm_advantages if buffer.norm_advantages is not None else buffer.advantages
    stats = {}
    T_, E = buffer.valid.shape
    steps = np.broadcast_to(np.arange(T_)[:, None], (T_, E))
    c_inputs = critic_inputs(buffer.states, steps, buffer.horizon)[buffer.valid]
    for team in trainable:
        policy = policies[team]
        if not isinstance(policy, AttentionTeamPolicy):
            continue
        rng = np.random.default_rng([config.seed, iteration, team, 0xA11CE])
        batch = team_batch(buffer, team, policy, adv)
        params = policy.parameters()
        opt = optimizers[team]
        snap = _snapshot(params)
        opt_snap = {k: np.copy(v) for k, v in opt.state_arrays().items()}
        team_stats = {"policy_loss": 0.0, "approx_kl": 0.0, "clip_frac": 0.0, "updates": 0}
        failed = False
        for epoch in range(config.epochs):
            perm = rng.permutation(batch.n)
            for start in range(0, batch.n, config.minibatch_size):
                select = np.zeros(batch.n, dtype=bool)
                select[perm[start : start + config.minibatch_size]] = True
                loss, st = surrogate_loss(policy, batch.groups, config.clip_eps, config.entropy_coef, select)
                if loss is None:
                    continue
                if not np.isfinite(loss.item()):
                    failed = True
                    break
                opt.zero_grad()
                T.backward(loss)
                clip_grad_norm(params, config.max_grad_norm)
                opt.step()
                if epoch == 0 and start == 0:
                    team_stats["first_max_ratio_dev"] = st["max_ratio_dev"]
                    team_stats["policy_std"] = st["policy_std"]
                team_stats["policy_loss"] += loss.item()
                team_stats["approx_kl"] += st["approx_kl"]
                team_stats["clip_frac"] += st["clip_frac"]
                team_stats["updates"] += 1
                if config.target_kl is not None and st["approx_kl"] > 1.5 * config.target_kl:
                    team_stats["early_stop_epoch"] = epoch
                    break
            if failed or "early_stop_epoch" in team_stats:
                break
        if failed or not all(np.all(np.isfinite(p.data)) for p in params):
            log.warning("team %d: non-finite loss at iteration %d; update discarded", team, iteration)
            _restore(params, snap)
            opt.load_state_arrays(opt_snap)
            team_stats["aborted"] = True
        n_upd = max(team_stats["updates"], 1)
        for key in ("policy_loss", "approx_kl", "clip_frac"):
            team_stats[key] /= n_upd
        if team in critics:
            team_stats["value_loss"] = fit_critic(
                critics[team], critic_optimizers[team], c_inputs, buffer.returns[..., team][buffer.valid], config, rng
            )
        stats[team] = team_stats
    return stats


def fit_critic(critic: Critic, opt, inputs: np.ndarray, returns: np.ndarray, config: TrainConfig, rng) -> float:
    critic.obs_stats.update(inputs)
    critic.ret_stats.update(returns[:, None].reshape(-1))
    x = critic.normalize_inputs(inputs)
    y = (returns - critic.ret_stats.mean) / critic.ret_stats.std
    n = x.shape[0]
    epochs = config.critic_epochs or config.epochs
    total, count = 0.0, 0
    params = critic.parameters()
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start : start + config.minibatch_size]
            pred = critic.forward(Tensor(x[idx]))
            err = T.sub(pred, Tensor(y[idx]))
            loss = T.scale(T.sum_all(T.mul(err, err)), 0.5 / idx.size)
            if not np.isfinite(loss.item()):
                continue
            opt.zero_grad()
            T.backward(loss)
            clip_grad_norm(params, config.max_grad_norm)
            opt.step()
            total += loss.item()
            count += 1
    return total / max(count, 1)


# -- loop ---------------------------------------------------------------------


@dataclass
class TrainResult:
    policies: dict
    critics: dict
    metrics: list[dict]
    env_steps: int


class Trainer:
    """Owns the optimizers, RNG streams and checkpointing for one run."""

    def __init__(self, make_env: Callable[[], MultiTeamGame], policies: dict, config: TrainConfig):
        self.config = config.validate()
        self.envs = [make_env() for _ in range(config.episodes_per_iteration)]
        self.spec = self.envs[0].spec
        self.policies = policies
        self.trainable = [
            t for t in range(self.spec.n_teams)
            if t not in config.frozen_teams and isinstance(policies[t], AttentionTeamPolicy)
        ]
        crng = np.random.default_rng([config.seed, 0xC417])
        in_dim = self.spec.n_agents * self.spec.state_dim + 1
        self.critics = {t: Critic(in_dim, config.critic_widths, crng) for t in self.trainable}
        clr = config.critic_lr or config.lr
        self.optimizers = {t: make_optimizer(config.optimizer, policies[t].parameters(), config.lr) for t in self.trainable}
        self.critic_optimizers = {t: make_optimizer(config.optimizer, self.critics[t].parameters(), clr) for t in self.trainable}
        self.rng = np.random.default_rng([config.seed, 0x2011])
        self.team_rngs = {t: np.random.default_rng([config.seed, 0x7EA, t]) for t in range(self.spec.n_teams)}
        self.iteration = 0
        self.env_steps = 0
        self.metrics: list[dict] = []

    def current_lr(self, base: float) -> float:
        if self.config.lr_schedule == "linear" and self.config.iterations > 0:
            return base * (1.0 - self.iteration / self.config.iterations)
        return base

    def run_iteration(self) -> dict:
        cfg = self.config
        for opt in self.optimizers.values():
            opt.lr = self.current_lr(cfg.lr)
        for opt in self.critic_optimizers.values():
            opt.lr = self.current_lr(cfg.critic_lr or cfg.lr)
        buffer = collect_rollouts(self.envs, self.policies, self.rng, self.trainable, self.team_rngs, keep_infos=True)
        attach_values(buffer, self.critics, self.spec.n_teams)
        compute_advantages(buffer, cfg.gamma, cfg.gae_lambda)
        stats = ppo_update(
            buffer, self.policies, self.critics, self.optimizers, self.critic_optimizers, cfg,
            iteration=self.iteration, trainable=self.trainable,
        )
        self.env_steps += buffer.n_steps
        ep_cost = buffer.episode_costs()
        row = {
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "team_cost_mean": ep_cost.mean(axis=0).tolist(),
            "team_cost_std": ep_cost.std(axis=0).tolist(),
        }
        true = [[inf.get("true_cost") for inf in step] for step in buffer.infos]
        if true and true[0] and true[0][0] is not None:
            arr = np.array([[v if v is not None else 0.0 for v in step] for step in true])
            row["true_cost_mean"] = float(arr.sum(axis=0).mean())
        row["teams"] = {str(t): {k: v for k, v in s.items()} for t, s in stats.items()}
        buffer.clear()
        self.iteration += 1
        self.metrics.append(row)
        return row

    # checkpoints hold policies, critics, optimizer moments and RNG states
    def save(self, path) -> None:
        arrays = {}
        for team, pol in self.policies.items():
            if isinstance(pol, AttentionTeamPolicy):
                for k, t in pol.named_parameters().items():
                    arrays[f"policy/{k}"] = t.data
        for team, critic in self.critics.items():
            arrays.update(critic.state_arrays(prefix=f"critic/team{team}/"))
        for team, opt in self.optimizers.items():
            arrays.update({f"opt/team{team}/{k}": v for k, v in opt.state_arrays().items()})
        for team, opt in self.critic_optimizers.items():
            arrays.update({f"copt/team{team}/{k}": v for k, v in opt.state_arrays().items()})
        meta = {
            "kind": "trainer",
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "rng": self.rng.bit_generator.state,
            "team_rngs": {str(t): r.bit_generator.state for t, r in self.team_rngs.items()},
            "config": _jsonable(asdict(self.config)),
            "policies": {
                str(t): {"roles": p.roles, "hyper": {str(r): pp.hyper() for r, pp in p.params.items()}}
                for t, p in self.policies.items()
                if isinstance(p, AttentionTeamPolicy)
            },
        }
        save_arrays(path, arrays, meta)

    def load(self, path) -> None:
        arrays, meta = load_arrays(path)
        for team, pol in self.policies.items():
            if isinstance(pol, AttentionTeamPolicy):
                pol.load_arrays(arrays, prefix="policy/")
        for team, critic in self.critics.items():
            critic.load_state_arrays(arrays, prefix=f"critic/team{team}/")
        for team, opt in self.optimizers.items():
            opt.load_state_arrays(_strip(arrays, f"opt/team{team}/"))
        for team, opt in self.critic_optimizers.items():
            opt.load_state_arrays(_strip(arrays, f"copt/team{team}/"))
        self.iteration = int(meta["iteration"])
        self.env_steps = int(meta["env_steps"])
        self.rng.bit_generator.state = _restore_bitgen(meta["rng"])
        for t, st in meta["team_rngs"].items():
            self.team_rngs[int(t)].bit_generator.state = _restore_bitgen(st)


def _strip(arrays, prefix):
    return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}


def _restore_bitgen(state):
    return dict(state)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def train(
    make_env: Callable[[], MultiTeamGame],
    policies: dict,
    config: TrainConfig,
    out_dir: str | None = None,
    resume_from: str | None = None,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Run ``config.iterations`` collect/advantage/update rounds.

    With ``out_dir`` the per-iteration metric rows go to ``metrics.jsonl``,
    wall-clock timings to ``timing.jsonl`` and checkpoints to
    ``checkpoint_<iteration>.npz`` plus ``checkpoint_last.npz``.
    """
    trainer = Trainer(make_env, policies, config)
    if resume_from:
        trainer.load(resume_from)
    metric_fh = timing_fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if resume_from else "w"
        metric_fh = open(os.path.join(out_dir, "metrics.jsonl"), mode)
        timing_fh = open(os.path.join(out_dir, "timing.jsonl"), mode)
    try:
        while trainer.iteration < config.iterations:
            t0 = time.perf_counter()
            row = trainer.run_iteration()
            if metric_fh:
                metric_fh.write(json.dumps(row, sort_keys=True) + "\n")
                metric_fh.flush()
                timing_fh.write(json.dumps({"iteration": row["iteration"], "seconds": time.perf_counter() - t0}) + "\n")
            if callback:
                callback(row)
            if out_dir and config.checkpoint_every and trainer.iteration % config.checkpoint_every == 0:
                trainer.save(os.path.join(out_dir, f"checkpoint_{trainer.iteration}.npz"))
        if out_dir:
            trainer.save(os.path.join(out_dir, "checkpoint_last.npz"))
    finally:
        if metric_fh:
            metric_fh.close()
            timing_fh.close()
    return TrainResult(trainer.policies, trainer.critics, trainer.metrics, trainer.env_steps)
