import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distgame.baselines import (
    DivergenceError,
    GainSchedule,
    LinearSystem,
    ZerothOrderConfig,
    batched_rollout_cost,
    dare_stationary,
    episode_seeds,
    evaluate_gain,
    riccati_finite,
    riccati_map,
    two_point_gradient,
    zeroth_order_learn,
)

GOLDEN = (1 + np.sqrt(5)) / 2


def scalar(a=1.0, b=1.0, noise=0.0):
    return LinearSystem([[a]], [[b]], noise)


def test_one_step_riccati_hand_example():
    sched = riccati_finite(scalar(), [[[1.0]], [[1.0]]], [[[1.0]]], 1)
    assert sched.gains[0][0, 0] == pytest.approx(0.5, abs=1e-15)


def test_zero_state_weight_gives_zero_gains():
    sched = riccati_finite(scalar(), [[[0.0]]] * 6, [[[1.0]]] * 5, 5)
    assert all(np.all(k == 0) for k in sched.gains)


def test_finite_schedule_dominates_random_schedules():
    rng = np.random.default_rng(0)
    horizon = 5
    sys_ = scalar(a=1.1, b=0.7)
    Ms = [[[q]] for q in rng.uniform(0.2, 1.0, horizon + 1)]
    Rs = [[[r]] for r in rng.uniform(0.2, 1.0, horizon)]
    opt = np.stack(riccati_finite(sys_, Ms, Rs, horizon).gains)[None]
    x0 = rng.uniform(-0.1, 0.1, size=(8, 1))
    noise = np.zeros((8, horizon, 1))
    best = batched_rollout_cost(sys_, opt, Ms, Rs, x0, noise)[0]
    others = opt + rng.uniform(-1.0, 1.0, size=(10_000, horizon, 1, 1))
    assert np.all(batched_rollout_cost(sys_, others, Ms, Rs, x0, noise) >= best - 1e-15)


def test_scalar_dare_golden_ratio():
    P, K = dare_stationary(scalar(), [[1.0]], [[1.0]])
    assert abs(P[0, 0] - GOLDEN) < 1e-9
    assert abs(K[0, 0] - 1 / GOLDEN) < 1e-9


def test_dare_cheap_leverage_limit():
    P, K = dare_stationary(scalar(a=1.0, b=1e4), [[1.0]], [[1.0]])
    assert K[0, 0] == pytest.approx(1.0 / 1e4, rel=1e-6)
    assert P[0, 0] == pytest.approx(1.0, rel=1e-6)


def test_dare_zero_state_weight():
    P, K = dare_stationary(scalar(), [[0.0]], [[1.0]])
    assert np.all(P == 0) and np.all(K == 0)


def test_dare_divergence_raises():
    with pytest.raises(DivergenceError):
        dare_stationary(scalar(a=2.0, b=0.0), [[1.0]], [[1.0]], max_iter=2000)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 0.95), b=st.floats(0.2, 2.0), q=st.floats(0.2, 1.0), r=st.floats(0.2, 1.0))
def test_riccati_tail_converges_to_dare_and_residual_small(a, b, q, r):
    sys_ = scalar(a, b)
    P, K = dare_stationary(sys_, [[q]], [[r]])
    assert np.max(np.abs(P - riccati_map(P, sys_.A, sys_.B, np.array([[q]]), np.array([[r]])))) < 1e-10
    sched = riccati_finite(sys_, [[[q]]] * 201, [[[r]]] * 200, 200)
    assert abs(sched.gains[0][0, 0] - K[0, 0]) < 1e-6


def test_dare_matrix_instance_residual():
    rng = np.random.default_rng(3)
    A = np.eye(4) + 0.1 * rng.normal(size=(4, 4))
    B = np.diag(rng.uniform(0.2, 1.0, 4))
    M = np.eye(4)
    R = 0.5 * np.eye(4)
    P, _ = dare_stationary(LinearSystem(A, B), M, R)
    assert np.max(np.abs(P - riccati_map(P, A, B, M, R))) < 1e-10


def test_evaluate_gain_examples():
    noisy = scalar(noise=1e-2)
    zero = GainSchedule([np.zeros((1, 1))], stationary=True)
    assert evaluate_gain(noisy, zero, [[[0.0]]] * 31, [[[0.0]]] * 30, 20, seed=0) == 0.0
    Ms, Rs = [[[1.0]]] * 31, [[[1.0]]] * 30
    _, K = dare_stationary(noisy, [[1.0]], [[1.0]])
    opt = GainSchedule([K], stationary=True)
    assert evaluate_gain(noisy, opt, Ms, Rs, 200, seed=1) < evaluate_gain(noisy, zero, Ms, Rs, 200, seed=1)
    assert evaluate_gain(noisy, opt, Ms, Rs, 50, seed=7) == evaluate_gain(noisy, opt, Ms, Rs, 50, seed=7)


def test_episode_seeds_deterministic_and_distinct():
    a = episode_seeds(5, 100)
    assert a == episode_seeds(5, 100) and len(set(a)) == 100
    assert a[:10] == episode_seeds(5, 10)


def test_two_point_gradient_on_quadratic():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = lambda t: 0.5 * t @ H @ t + t.sum()
    theta = np.array([0.3, -0.7])
    true = H @ theta + 1.0
    rng = np.random.default_rng(0)
    # one direction: the difference quotient of a quadratic is the exact directional derivative
    z = np.random.default_rng(0).standard_normal(2)
    g1 = two_point_gradient(f, theta, 1e-3, rng, directions=1)
    np.testing.assert_allclose(g1, (z @ true) * z, rtol=1e-9)
    est = two_point_gradient(f, theta, 1e-4, np.random.default_rng(1), directions=40_000)
    np.testing.assert_allclose(est, true, rtol=0.03)
    masked = two_point_gradient(f, theta, 1e-4, rng, directions=10, mask=np.array([1.0, 0.0]))
    assert masked[1] == 0.0


def test_zeroth_order_respects_mask_at_every_iterate():
    rng = np.random.default_rng(0)
    n = 3
    sys_ = LinearSystem(np.eye(n), np.diag(rng.uniform(0.2, 1.0, n)), 1e-3)
    Ms = [np.eye(n)] * 11
    Rs = [np.eye(n)] * 10
    res = zeroth_order_learn(sys_, Ms, Rs, [np.eye(n)] * 10, ZerothOrderConfig(iterations=50, lr=0.5), keep_history=True)
    assert res.iterates_masked and not res.diverged
    off = ~np.eye(n, dtype=bool)
    for theta in res.history:
        assert np.all(theta[:, off] == 0.0)
    assert len(res.curve) == 50


def test_zeroth_order_divergence_stops_early():
    sys_ = scalar(a=1.0, b=1.0, noise=1e-3)
    cfg = ZerothOrderConfig(iterations=100, lr=1e4, divergence_cost=10.0)
    res = zeroth_order_learn(sys_, [[[1.0]]] * 31, [[[1.0]]] * 30, [np.ones((1, 1))] * 30, cfg)
    assert res.diverged and len(res.curve) < 100


def test_zeroth_order_full_mask_scalar_reaches_stationary_cost():
    sys_ = scalar(a=1.0, b=0.5, noise=1e-3)
    Ms, Rs = [[[1.0]]] * 31, [[[1.0]]] * 30
    res = zeroth_order_learn(sys_, Ms, Rs, [np.ones((1, 1))] * 30, ZerothOrderConfig(iterations=600, lr=0.5))
    _, K = dare_stationary(sys_, [[1.0]], [[1.0]])
    stationary = evaluate_gain(sys_, GainSchedule([K], stationary=True), Ms, Rs, 200, seed=9)
    learned = evaluate_gain(sys_, res.schedule, Ms, Rs, 200, seed=9)
    assert learned <= 1.10 * stationary
