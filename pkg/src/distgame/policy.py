"""Distributed nonlinear feedback-gain policies built from self-attention.

Agent l in team i acts with

    u_l = - sum_{p in N_l} G_p(x_N) x_p

where the U x X gain blocks ``G_p`` are the columns of a stack of attention
layers evaluated over the neighbor bundle ``x_N``, one token per neighbor.
Weights have fixed sizes, so one parameter set serves any neighbor count,
and non-neighbors never enter the computation.

Token features. Neighbor p of agent l enters layer 1 as
``[feature_scale * x_p, onehot(team_p), [team_p == team_l], [p == l]]``. The
raw ``x_p`` (unscaled) is what multiplies the gain block.

Layer w (tokens as rows, H is n x d):

    Q = H A^T,  K = H B^T,  V = H C^T
    S = softmax(Q^T K / (n sqrt(h)))   (h x h, pooled over neighbors)
    Y = V S^T                          (token p becomes S v_p)
    H' = tanh(Y D^T)                   (identity on the last layer)

``attention_axis="neighbors"`` swaps the context for token-to-token
attention, Y = softmax(Q K^T / sqrt(h)) V.

The last layer has U*X outputs; row p of the output, read row-major as a
U x X matrix, is the gain block for neighbor p.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .games.core import CommGraph, TeamSpec
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_VAR_FLOOR = np.log(1e-6)
LOG_STD_MIN = 0.5 * LOG_VAR_FLOOR
LOG_STD_MAX = np.log(10.0)
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


ATTENTION_AXES = ("features", "neighbors")


class PolicyConfigError(ValueError):
    """Missing or inconsistent policy parameters."""


def _uniform(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> Tensor:
    bound = gain / np.sqrt(cols)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


class PolicyParams:
    """Attention weights {A_w, B_w, C_w, D_w} plus the log-std head.

    The log-std head is a two-layer tanh network on the neighbor-averaged
    token features; both of its layers carry a bias column. Its output layer
    starts at zero with the bias set to ``log(init_std)``.
    """

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        n_teams: int,
        widths: Sequence[int] = (64, 64),
        cov_width: int = 16,
        init_std: float = 0.3,
        feature_scale: float = 1.0,
        gain_init: float = 1.0,
        qk_init: float = 1.0,
        attention_axis: str = "features",
        rng: np.random.Generator | int | None = None,
    ):
        if not widths:
            raise PolicyConfigError("need at least one attention layer")
        if attention_axis not in ATTENTION_AXES:
            raise PolicyConfigError(f"attention_axis must be one of {ATTENTION_AXES}, got {attention_axis!r}")
        self.attention_axis = attention_axis
        rng = np.random.default_rng(rng)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.n_teams = int(n_teams)
        self.widths = tuple(int(w) for w in widths)
        self.cov_width = int(cov_width)
        self.feature_scale = float(feature_scale)
        self.feature_dim = self.state_dim + self.n_teams + 2
        self.out_dim = self.action_dim * self.state_dim

        self.layers: list[dict[str, Tensor]] = []
        d_in = self.feature_dim
        for w, h in enumerate(self.widths):
            last = w == len(self.widths) - 1
            d_out = self.out_dim if last else h
            self.layers.append(
                {
                    "A": _uniform(rng, h, d_in, qk_init),
                    "B": _uniform(rng, h, d_in, qk_init),
                    "C": _uniform(rng, h, d_in),
                    "D": _uniform(rng, d_out, h, gain_init if last else 1.0),
                }
            )
            d_in = h
        w2 = np.zeros((self.action_dim, self.cov_width + 1))
        w2[:, -1] = np.log(init_std)
        self.cov = {
            "W1": _uniform(rng, self.cov_width, self.feature_dim + 1),
            "W2": Tensor(w2, requires_grad=True),
        }

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for w, layer in enumerate(self.layers):
            for key in "ABCD":
                out[f"layer{w}/{key}"] = layer[key]
        for key, t in self.cov.items():
            out[f"cov/{key}"] = t
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def hyper(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "n_teams": self.n_teams,
            "widths": list(self.widths),
            "cov_width": self.cov_width,
            "feature_scale": self.feature_scale,
            "attention_axis": self.attention_axis,
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, t in self.named_parameters().items():
            key = prefix + name
            if key not in arrays:
                raise CheckpointError(f"checkpoint lacks matrix {key}")
            arr = np.asarray(arrays[key], dtype=np.float64)
            if arr.shape != t.shape:
                raise CheckpointError(
                    f"matrix {key} has shape {list(arr.shape)}, policy expects {list(t.shape)}"
                )
            t.data = arr.copy()

    def copy(self) -> "PolicyParams":
        clone = PolicyParams.__new__(PolicyParams)
        clone.__dict__.update({k: v for k, v in self.__dict__.items() if k not in ("layers", "cov")})
        clone.layers = [{k: Tensor(t.data.copy(), requires_grad=True) for k, t in l.items()} for l in self.layers]
        clone.cov = {k: Tensor(t.data.copy(), requires_grad=True) for k, t in self.cov.items()}
        return clone


# -- bundles ------------------------------------------------------------------


@dataclass
class NeighborBundle:
    """What agent ``owner`` sees at one step: neighbor ids, teams and states."""

    owner: int
    owner_team: int
    ids: list[int]
    teams: list[int]
    states: np.ndarray  # (n, X)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] != len(self.ids):
            raise PolicyConfigError("bundle states must be (n_neighbors, state_dim)")

    def __len__(self):
        return len(self.ids)

    def permuted(self, order: Sequence[int]) -> "NeighborBundle":
        order = list(order)
        return NeighborBundle(
            self.owner,
            self.owner_team,
            [self.ids[i] for i in order],
            [self.teams[i] for i in order],
            self.states[order],
        )


def neighbor_bundle(state: np.ndarray, graph: CommGraph, agent: int) -> NeighborBundle:
    ids = graph.neighbors(agent)
    return NeighborBundle(
        agent,
        int(graph.team_of[agent]),
        ids,
        [int(graph.team_of[p]) for p in ids],
        np.asarray(state)[ids],
    )


def token_extras(owner: int, owner_team: int, ids, teams, n_teams: int) -> np.ndarray:
    """Non-state part of the token features: team one-hot, intra flag, self flag."""
    n = len(ids)
    out = np.zeros((n, n_teams + 2))
    out[np.arange(n), np.asarray(teams, dtype=int)] = 1.0
    out[:, n_teams] = np.asarray(teams) == owner_team
    out[:, n_teams + 1] = np.asarray(ids) == owner
    return out


def bundle_features(bundle: NeighborBundle, params: PolicyParams) -> np.ndarray:
    extras = token_extras(bundle.owner, bundle.owner_team, bundle.ids, bundle.teams, params.n_teams)
    return np.concatenate([params.feature_scale * bundle.states, extras], axis=1)


# -- batched forward ------------------------------------------------------------


def _linear_tokens(h: Tensor, w: Tensor) -> Tensor:
    """Apply w (out x in) to every token of h (B, n, in)."""
    b, n, d = h.shape
    flat = T.reshape(h, (b * n, d))
    return T.reshape(T.matmul(flat, T.transpose(w)), (b, n, w.shape[0]))


def attention_tokens(features: Tensor, params: PolicyParams) -> Tensor:
    """Attention stack over a batch of equal-size bundles: (B, n, F) -> (B, n, U*X).

    With Q, K, V the (n, h) token-major projections of a layer input:

    * ``features``: S = softmax_rows(Q^T K / (n sqrt(h))) is an (h, h) context
      pooled over all neighbors and each token becomes y_p = S v_p.
    * ``neighbors``: token-to-token attention Y = softmax_rows(Q K^T / sqrt(h)) V.

    Both are permutation-equivariant over tokens and see only the bundle.
    """
    if features.ndim != 3 or features.shape[1] < 1:
        raise PolicyConfigError(f"features must be (B, n>=1, F), got {list(features.shape)}")
    if features.shape[2] != params.feature_dim:
        raise PolicyConfigError(
            f"feature width {features.shape[2]} does not match policy input {params.feature_dim}"
        )
    h = features
    last = params.n_layers - 1
    for w, layer in enumerate(params.layers):
        q = _linear_tokens(h, layer["A"])
        k = _linear_tokens(h, layer["B"])
        v = _linear_tokens(h, layer["C"])
        n, d = q.shape[1], q.shape[2]
        if params.attention_axis == "features":
            ctx = T.softmax_rows(T.scale(T.bmm(T.transpose(q), k), 1.0 / (n * np.sqrt(d))))
            y = T.bmm(v, T.transpose(ctx))
        else:
            att = T.softmax_rows(T.scale(T.bmm(q, T.transpose(k)), 1.0 / np.sqrt(d)))
            y = T.bmm(att, v)
        z = _linear_tokens(y, layer["D"])
        h = z if w == last else T.tanh_elem(z)
    return h


def gain_tensor(tokens_out: Tensor, params: PolicyParams) -> Tensor:
    """(B, n, U*X) -> (B, n, U, X) gain blocks, row-major per token."""
    b, n, ux = tokens_out.shape
    if ux != params.out_dim:
        raise PolicyConfigError(f"attention output has {ux} rows, expected U*X={params.out_dim}")
    return T.reshape(tokens_out, (b, n, params.action_dim, params.state_dim))


def mean_action(features: Tensor, states: Tensor, params: PolicyParams) -> Tensor:
    """u = -sum_p G_p x_p for each bundle in the batch; returns (B, U)."""
    gains = gain_tensor(attention_tokens(features, params), params)
    b, n, u, x = gains.shape
    g = T.reshape(T.transpose(gains, (0, 2, 1, 3)), (b, u, n * x))
    s = T.reshape(states, (b, n * x, 1))
    return T.neg(T.reshape(T.bmm(g, s), (b, u)))


def log_std(features: Tensor, params: PolicyParams) -> Tensor:
    """State-dependent log standard deviation, (B, n, F) -> (B, U), clipped to the floor."""
    b, n, _ = features.shape
    pooled = T.scale(T.sum_axis(features, 1), 1.0 / n)
    ones = Tensor(np.ones((b, 1)))
    hidden = T.tanh_elem(T.matmul(T.concat([pooled, ones], axis=1), T.transpose(params.cov["W1"])))
    out = T.matmul(T.concat([hidden, ones], axis=1), T.transpose(params.cov["W2"]))
    return T.clip(out, LOG_STD_MIN, LOG_STD_MAX)


def gaussian_log_prob(actions: Tensor, mean: Tensor, logstd: Tensor) -> Tensor:
    """Diagonal Gaussian log-density per row, (B, U) -> (B,)."""
    z = T.mul(T.sub(actions, mean), T.exp_elem(T.neg(logstd)))
    quad = T.scale(T.sum_axis(T.mul(z, z), 1), -0.5)
    norm = T.shift(T.sum_axis(logstd, 1), mean.shape[1] * _HALF_LOG_2PI)
    return T.sub(quad, norm)


def gaussian_entropy(logstd: Tensor) -> Tensor:
    return T.shift(T.sum_axis(logstd, 1), logstd.shape[1] * (0.5 + _HALF_LOG_2PI))


# -- single-bundle API ------------------------------------------------------


def _bundle_tensors(bundle: NeighborBundle, params: PolicyParams) -> tuple[Tensor, Tensor]:
    if len(bundle) == 0:
        raise PolicyConfigError("empty neighbor bundle")
    if bundle.states.shape[1] != params.state_dim:
        raise PolicyConfigError(
            f"bundle state width {bundle.states.shape[1]} != policy state_dim {params.state_dim}"
        )
    feats = bundle_features(bundle, params)[None]
    return Tensor(feats), Tensor(bundle.states[None])


def attention_forward(bundle: NeighborBundle, params: PolicyParams) -> Tensor:
    """Attention output for one bundle as a (U*X, n) matrix, one column per neighbor."""
    feats, _ = _bundle_tensors(bundle, params)
    out = attention_tokens(feats, params)
    return T.transpose(T.reshape(out, out.shape[1:]))


def assemble_gains(attn_out: Tensor | np.ndarray, bundle: NeighborBundle, action_dim: int, state_dim: int):
    """Pair every column with its neighbor: [(neighbor id, U x X gain block)]."""
    data = attn_out.data if isinstance(attn_out, Tensor) else np.asarray(attn_out)
    if data.ndim != 2 or data.shape[0] != action_dim * state_dim:
        raise PolicyConfigError(
            f"attention output must have U*X={action_dim * state_dim} rows, got shape {list(data.shape)}"
        )
    if data.shape[1] != len(bundle):
        raise PolicyConfigError("attention output has one column per neighbor")
    return [(p, data[:, c].reshape(action_dim, state_dim)) for c, p in enumerate(bundle.ids)]


def act_deterministic(bundle: NeighborBundle, params: PolicyParams) -> np.ndarray:
    with T.no_grad():
        feats, states = _bundle_tensors(bundle, params)
        return mean_action(feats, states, params).data[0].copy()


def act_stochastic(bundle: NeighborBundle, params: PolicyParams, rng: np.random.Generator):
    """Sample u ~ N(mean, diag(sigma^2)); returns (action, log-density of the sample)."""
    with T.no_grad():
        feats, states = _bundle_tensors(bundle, params)
        mu = mean_action(feats, states, params)
        ls = log_std(feats, params)
    if np.any(ls.data <= LOG_STD_MIN):
        log.warning("policy variance hit the floor 1e-6; clamped")
    action = mu.data[0] + np.exp(ls.data[0]) * rng.standard_normal(params.action_dim)
    with T.no_grad():
        lp = gaussian_log_prob(Tensor(action[None]), mu, ls)
    return action, float(lp.data[0])


# -- team level -------------------------------------------------------------


@dataclass
class BundleGroup:
    """Equal-size bundles that share one parameter set.

    ``rows`` index the caller's agent list, ``index`` (B, n) points into the
    flattened (E*M) state stack and ``extras`` holds the non-state features.
    """

    role: int
    n: int
    rows: np.ndarray
    index: np.ndarray
    extras: np.ndarray


def group_bundles(graphs: Sequence[CommGraph], agents: Sequence[tuple[int, int]], roles: Sequence[int], n_teams: int):
    """Group (env, agent) pairs by (role, neighbor count)."""
    buckets: dict[tuple[int, int], list] = {}
    for row, ((e, l), role) in enumerate(zip(agents, roles)):
        g = graphs[e]
        ids = g.neighbors(l)
        teams = g.team_of[ids]
        n_agents = g.n_agents
        key = (int(role), len(ids))
        bucket = buckets.setdefault(key, [[], [], []])
        bucket[0].append(row)
        bucket[1].append([e * n_agents + p for p in ids])
        bucket[2].append(token_extras(l, int(g.team_of[l]), ids, teams, n_teams))
    groups = []
    for (role, n), (rows, idx, extras) in sorted(buckets.items()):
        groups.append(BundleGroup(role, n, np.array(rows), np.array(idx, dtype=np.intp), np.stack(extras)))
    return groups


def group_inputs(flat_states: Tensor, group: BundleGroup, params: PolicyParams) -> tuple[Tensor, Tensor]:
    """Token features and gain-product states for one group, differentiable in the states."""
    states = T.gather_rows(flat_states, group.index)
    feats = T.concat([T.scale(states, params.feature_scale), Tensor(group.extras)], axis=-1)
    return feats, states


class AttentionTeamPolicy:
    """All attention policies of one team, one parameter set per role."""

    stochastic_capable = True

    def __init__(self, team: int, spec: TeamSpec, params: dict[int, PolicyParams], roles: Sequence[int] | None = None):
        self.team = int(team)
        self.spec = spec
        self.params = dict(params)
        n_local = spec.agents_per_team[team]
        self.roles = list(roles) if roles is not None else [0] * n_local
        if len(self.roles) != n_local:
            raise PolicyConfigError(f"team {team} has {n_local} agents but {len(self.roles)} roles")
        missing = sorted(set(self.roles) - set(self.params))
        if missing:
            raise PolicyConfigError(f"team {team}: no parameters for roles {missing}")

    @classmethod
    def create(cls, team: int, spec: TeamSpec, rng, roles=None, **kwargs) -> "AttentionTeamPolicy":
        rng = np.random.default_rng(rng)
        n_local = spec.agents_per_team[team]
        roles = list(roles) if roles is not None else [0] * n_local
        params = {
            r: PolicyParams(spec.state_dim, spec.action_dim, spec.n_teams, rng=rng, **kwargs)
            for r in sorted(set(roles))
        }
        return cls(team, spec, params, roles)

    @property
    def agent_ids(self) -> list[int]:
        s = self.spec.team_slice(self.team)
        return list(range(s.start, s.stop))

    def parameters(self) -> list[Tensor]:
        return [t for r in sorted(self.params) for t in self.params[r].parameters()]

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            f"team{self.team}/role{r}/{k}": t
            for r in sorted(self.params)
            for k, t in self.params[r].named_parameters().items()
        }

    def groups(self, graphs: Sequence[CommGraph]):
        agents = [(e, l) for e in range(len(graphs)) for l in self.agent_ids]
        roles = [self.roles[i] for _ in range(len(graphs)) for i in range(len(self.agent_ids))]
        return group_bundles(graphs, agents, roles, self.spec.n_teams)

    def forward(self, states, graphs: Sequence[CommGraph]):
        """Mean and log-std for every team agent in every env, as row-ordered Tensors.

        Returns (groups, [(mean, logstd, feats, gain_states)] per group). ``states``
        may be an (E, M, X) array or Tensor.
        """
        st = states if isinstance(states, Tensor) else Tensor(np.asarray(states, dtype=np.float64))
        e, m, x = st.shape
        flat = T.reshape(st, (e * m, x))
        groups = self.groups(graphs)
        outs = []
        for grp in groups:
            p = self.params[grp.role]
            feats, gstates = group_inputs(flat, grp, p)
            outs.append((mean_action(feats, gstates, p), log_std(feats, p), feats, gstates))
        return groups, outs

    def act(self, states, graphs, rng=None, deterministic: bool = True):
        """Actions (E, M_i, U) and, when sampling, log-densities (E, M_i)."""
        states = np.asarray(states, dtype=np.float64)
        n_env = states.shape[0]
        n_local = len(self.agent_ids)
        u_dim = self.spec.action_dim
        mean = np.zeros((n_env * n_local, u_dim))
        lstd = np.zeros((n_env * n_local, u_dim))
        with T.no_grad():
            groups, outs = self.forward(states, graphs)
        samples = []
        for grp, (mu, ls, feats, gst) in zip(groups, outs):
            mean[grp.rows] = mu.data
            lstd[grp.rows] = ls.data
            samples.append((grp, feats.data, gst.data))
        if deterministic:
            return mean.reshape(n_env, n_local, u_dim), None, samples
        if np.any(lstd <= LOG_STD_MIN):
            log.warning("policy variance hit the floor 1e-6; clamped")
        noise = rng.standard_normal(mean.shape)
        actions = mean + np.exp(lstd) * noise
        logp = -0.5 * (noise * noise).sum(axis=1) - lstd.sum(axis=1) - u_dim * _HALF_LOG_2PI
        return actions.reshape(n_env, n_local, u_dim), logp.reshape(n_env, n_local), samples

    def save(self, path, meta: dict | None = None) -> None:
        arrays = {k: t.data for k, t in self.named_parameters().items()}
        header = {
            "kind": "attention_team_policy",
            "team": self.team,
            "roles": self.roles,
            "hyper": {str(r): p.hyper() for r, p in self.params.items()},
        }
        header.update(meta or {})
        save_arrays(path, arrays, header)

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for r, p in self.params.items():
            p.load_state_arrays(arrays, prefix=f"{prefix}team{self.team}/role{r}/")

    @classmethod
    def load(cls, path, spec: TeamSpec, team: int | None = None) -> "AttentionTeamPolicy":
        arrays, meta = load_arrays(path)
        team = meta["team"] if team is None else team
        params = {}
        for r_str, hyper in meta["hyper"].items():
            if hyper["state_dim"] != spec.state_dim or hyper["action_dim"] != spec.action_dim:
                raise CheckpointError(
                    f"{path}: policy dims (X={hyper['state_dim']}, U={hyper['action_dim']}) "
                    f"do not match the game (X={spec.state_dim}, U={spec.action_dim})"
                )
            p = PolicyParams(
                hyper["state_dim"], hyper["action_dim"], hyper["n_teams"], hyper["widths"],
                hyper["cov_width"], feature_scale=hyper["feature_scale"],
                attention_axis=hyper.get("attention_axis", "features"), rng=0,
            )
            params[int(r_str)] = p
        pol = cls(team, spec, params, meta["roles"])
        src_team = meta["team"]
        for r, p in params.items():
            p.load_state_arrays(arrays, prefix=f"team{src_team}/role{r}/")
        return pol


class RandomTeamPolicy:
    """Uniform random actions inside the game's action box."""

    stochastic_capable = False

    def __init__(self, team: int, spec: TeamSpec, low, high):
        self.team = team
        self.spec = spec
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)

    def act(self, states, graphs, rng=None, deterministic: bool = True):
        n_env = np.asarray(states).shape[0]
        n_local = self.spec.agents_per_team[self.team]
        u = rng.uniform(self.low, self.high, size=(n_env, n_local, self.spec.action_dim))
        return u, None, None


class FeedforwardTeamPolicy:
    """Per-agent tanh MLP on the agent's own state. A plain comparison double."""

    stochastic_capable = False

    def __init__(self, team: int, spec: TeamSpec, hidden: int = 16, rng=None):
        rng = np.random.default_rng(rng)
        self.team = team
        self.spec = spec
        self.w1 = rng.uniform(-1, 1, (hidden, spec.state_dim)) / np.sqrt(spec.state_dim)
        self.w2 = rng.uniform(-1, 1, (spec.action_dim, hidden)) / np.sqrt(hidden)

    def act(self, states, graphs, rng=None, deterministic: bool = True):
        s = np.asarray(states)[:, self.spec.team_slice(self.team)]
        return np.tanh(s @ self.w1.T) @ self.w2.T, None, None


def team_policy_apply(state: np.ndarray, graph: CommGraph, policies: dict, rng=None) -> np.ndarray:
    """Deterministic joint action (M, U) for one environment."""
    spec = next(iter(policies.values())).spec
    out = np.zeros((spec.n_agents, spec.action_dim))
    for team in range(spec.n_teams):
        if team not in policies:
            raise PolicyConfigError(f"no policy registered for team {team}")
        u, _, _ = policies[team].act(np.asarray(state)[None], [graph], rng=rng, deterministic=True)
        out[spec.team_slice(team)] = u[0]
    return out
