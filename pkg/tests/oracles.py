"""Independent reference implementations used by the tests.

None of these touch the autodiff tape or the vectorized code paths they
check; they are deliberately written as plain loops.
"""

import math

import numpy as np


def attention_oracle(layers, feats, axis="features"):
    """Loop-based attention stack. ``layers`` is a list of dicts of numpy A, B, C, D."""
    h = [list(map(float, row)) for row in feats]
    n = len(h)
    for w, layer in enumerate(layers):
        A, B, C, D = (layer[k] for k in "ABCD")
        hid = A.shape[0]
        q = [[sum(A[a, j] * h[p][j] for j in range(len(h[p]))) for a in range(hid)] for p in range(n)]
        k = [[sum(B[a, j] * h[p][j] for j in range(len(h[p]))) for a in range(hid)] for p in range(n)]
        v = [[sum(C[a, j] * h[p][j] for j in range(len(h[p]))) for a in range(hid)] for p in range(n)]
        y = [[0.0] * hid for _ in range(n)]
        if axis == "features":
            scale = 1.0 / (n * math.sqrt(hid))
            for a in range(hid):
                logits = [sum(q[p][a] * k[p][b] for p in range(n)) * scale for b in range(hid)]
                top = max(logits)
                ex = [math.exp(z - top) for z in logits]
                tot = sum(ex)
                for p in range(n):
                    y[p][a] = sum(ex[b] / tot * v[p][b] for b in range(hid))
        else:
            scale = 1.0 / math.sqrt(hid)
            for p in range(n):
                logits = [sum(q[p][a] * k[r][a] for a in range(hid)) * scale for r in range(n)]
                top = max(logits)
                ex = [math.exp(z - top) for z in logits]
                tot = sum(ex)
                for a in range(hid):
                    y[p][a] = sum(ex[r] / tot * v[r][a] for r in range(n))
        last = w == len(layers) - 1
        out = []
        for p in range(n):
            z = [sum(D[o, a] * y[p][a] for a in range(hid)) for o in range(D.shape[0])]
            out.append(z if last else [math.tanh(t) for t in z])
        h = out
    return np.array(h)


def features_oracle(bundle_ids, bundle_teams, owner, owner_team, states, n_teams, feature_scale):
    rows = []
    for p, t, x in zip(bundle_ids, bundle_teams, states):
        onehot = [1.0 if t == j else 0.0 for j in range(n_teams)]
        rows.append([feature_scale * float(v) for v in x] + onehot + [float(t == owner_team), float(p == owner)])
    return np.array(rows)


def dense_gain_product(gains_by_agent, state, action_dim):
    """Build the full masked block matrix K (M*U x M*X) and return -K x reshaped to (M, U).

    ``gains_by_agent[l]`` is a list of (neighbor id, U x X block); missing
    pairs are zero blocks.
    """
    m, x_dim = state.shape
    big = np.zeros((m * action_dim, m * x_dim))
    for l, blocks in enumerate(gains_by_agent):
        for p, g in blocks:
            big[l * action_dim:(l + 1) * action_dim, p * x_dim:(p + 1) * x_dim] = g
    return -(big @ state.reshape(-1)).reshape(m, action_dim)


def gae_oracle(rewards, values, last_value, gamma, lam):
    """Textbook backward recursion on one trajectory."""
    n = len(rewards)
    adv = [0.0] * n
    running = 0.0
    for t in reversed(range(n)):
        nxt = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return np.array(adv)


def brute_force_metrics(pursuer_pos, evader_pos, rewards, radius=0.125):
    """Per-episode (avg min distance, catches, cumulative reward) by triple loop.

    The distance is averaged over steps and evaders.
    """
    steps = len(pursuer_pos)
    n_evaders = len(evader_pos[0]) if steps else 0
    total_min = 0.0
    n_catch = 0
    for k in range(steps):
        for e in range(len(evader_pos[k])):
            best = math.inf
            for p in range(len(pursuer_pos[k])):
                dx = evader_pos[k][e][0] - pursuer_pos[k][p][0]
                dy = evader_pos[k][e][1] - pursuer_pos[k][p][1]
                best = min(best, math.sqrt(dx * dx + dy * dy))
            total_min += best
            if best <= radius:
                n_catch += 1
    cum = [sum(rewards[k][i] for k in range(steps)) for i in range(len(rewards[0]))]
    return total_min / (steps * n_evaders), n_catch, cum


def policy_forward_np(layers, cov, feats, states, axis="features", log_std_bounds=(-np.inf, np.inf), dtype=np.float64):
    """Plain numpy mean action and log-std for one bundle.

    ``layers``: list of dicts of numpy A, B, C, D; ``cov``: dict with W1, W2.
    ``feats`` (n, F), ``states`` (n, X). Returns (mean (U,), log_std (U,)).
    Pass ``dtype=np.longdouble`` to push round-off below float64 when taking
    finite differences.
    """
    layers = [{k: np.asarray(m, dtype=dtype) for k, m in layer.items()} for layer in layers]
    cov = {k: np.asarray(m, dtype=dtype) for k, m in cov.items()}
    states = np.asarray(states, dtype=dtype)
    h = np.asarray(feats, dtype=dtype)
    n = h.shape[0]
    for w, layer in enumerate(layers):
        q, k, v = h @ layer["A"].T, h @ layer["B"].T, h @ layer["C"].T
        d = q.shape[1]
        if axis == "features":
            logits = q.T @ k / (n * np.sqrt(d))
            s = np.exp(logits - logits.max(axis=1, keepdims=True))
            s /= s.sum(axis=1, keepdims=True)
            y = v @ s.T
        else:
            logits = q @ k.T / np.sqrt(d)
            s = np.exp(logits - logits.max(axis=1, keepdims=True))
            s /= s.sum(axis=1, keepdims=True)
            y = s @ v
        z = y @ layer["D"].T
        h = z if w == len(layers) - 1 else np.tanh(z)
    x_dim = states.shape[1]
    gains = h.reshape(n, -1, x_dim)
    mean = -np.einsum("pux,px->u", gains, states)
    pooled = np.append(np.asarray(feats, dtype=dtype).mean(axis=0), 1.0)
    hidden = np.append(np.tanh(cov["W1"] @ pooled), 1.0)
    return mean, np.clip(cov["W2"] @ hidden, *log_std_bounds)
