import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distgame import tensor as T
from distgame.tensor import ComputationTape, ContractError, ShapeError, Tensor

finite = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)


def mat(shape):
    return arrays(np.float64, shape, elements=finite)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def check_grad(build, *inputs, tol=1e-4):
    """Compare tape gradients of sum(build(*inputs) * weights) with central differences."""
    rng = np.random.default_rng(0)
    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    out = build(*leaves)
    w = Tensor(rng.uniform(0.5, 1.5, size=out.shape))
    T.backward(T.sum_all(T.mul(out, w)))
    for i, leaf in enumerate(leaves):

        def f(x, i=i):
            args = [Tensor(l.data) for l in leaves]
            args[i] = x
            return T.sum_all(T.mul(build(*args), w))

        fd = T.finite_diff_grad(f, Tensor(leaf.data.copy()))
        assert rel_err(leaf.grad, fd.data) < tol or np.max(np.abs(leaf.grad - fd.data)) < 1e-7


# -- examples -------------------------------------------------------------------


def test_matmul_identity_and_dot():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(T.matmul(eye, Tensor([[3.0], [4.0]])).data, [[3.0], [4.0]])
    np.testing.assert_array_equal(T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])


def test_matmul_gradient_example():
    a = Tensor([[1.0, 2.0]], requires_grad=True)
    b = Tensor([[3.0], [4.0]])
    T.backward(T.sum_all(T.matmul(a, b)))
    np.testing.assert_allclose(a.grad, [[3.0, 4.0]])
    fd = T.finite_diff_grad(lambda x: T.sum_all(T.matmul(x, b)), Tensor([[1.0, 2.0]]), h=1e-6)
    np.testing.assert_allclose(fd.data, [[3.0, 4.0]], atol=1e-8)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\[2, 3\].*\[2, 3\]"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@pytest.mark.parametrize(
    "row, expected",
    [([0.0, 0.0], [0.5, 0.5]), ([1000.0, 1000.0], [0.5, 0.5]), ([0.0, np.log(3.0)], [0.25, 0.75])],
)
def test_softmax_examples(row, expected):
    np.testing.assert_allclose(T.softmax_rows(Tensor([row])).data, [expected], atol=1e-15)


def test_softmax_nan_raises():
    with pytest.raises(FloatingPointError):
        T.softmax_rows(Tensor([[0.0, np.nan]]))


def test_structural_examples():
    assert T.tanh_elem(Tensor([0.0])).data[0] == 0.0
    r = T.reshape(Tensor([1.0, 2, 3, 4, 5, 6]), (2, 3))
    np.testing.assert_array_equal(T.slice_cols(r, 0, 1).data.ravel(), [1.0, 4.0])
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    T.backward(T.sum_all(a))
    np.testing.assert_array_equal(a.grad, np.ones((2, 3)))


def test_backward_quadratic():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    T.backward(T.sum_all(T.mul(w, w)))
    np.testing.assert_allclose(w.grad, [2.0, 4.0, 6.0])


def test_backward_softmax_sum_is_zero():
    a = Tensor([[0.3, -1.2]], requires_grad=True)
    T.backward(T.sum_all(T.softmax_rows(a)))
    np.testing.assert_allclose(a.grad, [[0.0, 0.0]], atol=1e-15)


def test_backward_rejects_non_scalar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(T.scale(a, 2.0))


def test_two_layer_tanh_net_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(5, 3)))
    w1 = rng.normal(size=(3, 4))
    w2 = rng.normal(size=(4, 1))

    def loss(a, b):
        return T.sum_all(T.tanh_elem(T.matmul(T.tanh_elem(T.matmul(x, a)), b)))

    A, B = Tensor(w1, requires_grad=True), Tensor(w2, requires_grad=True)
    T.backward(loss(A, B))
    assert rel_err(A.grad, T.finite_diff_grad(lambda t: loss(t, Tensor(w2)), Tensor(w1)).data) < 1e-4
    assert rel_err(B.grad, T.finite_diff_grad(lambda t: loss(Tensor(w1), t), Tensor(w2)).data) < 1e-4


def test_finite_diff_examples():
    np.testing.assert_allclose(T.finite_diff_grad(lambda x: T.sum_all(T.mul(x, x)), Tensor([3.0])).data, [6.0], atol=1e-6)
    np.testing.assert_array_equal(T.finite_diff_grad(lambda x: 4.0, Tensor([1.0, 2.0])).data, [0.0, 0.0])


def test_tape_is_topologically_ordered():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = T.tanh_elem(T.matmul(a, a))
    out = T.sum_all(T.add(b, a))
    tape = ComputationTape.from_output(out)
    position = {id(t): i for i, t in enumerate(tape.order)}
    for t in tape.order:
        if t._node is not None:
            assert all(position[id(x)] < position[id(t)] for x in t._node.inputs)
    assert tape.ops[-1] == "sum_all"


def test_no_grad_records_nothing():
    a = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        b = T.scale(a, 3.0)
    assert b._node is None and not b.requires_grad


def test_backward_consumes_tape():
    a = Tensor([1.0, 2.0], requires_grad=True)
    out = T.sum_all(T.mul(a, a))
    T.backward(out)
    first = a.grad.copy()
    T.backward(out)
    np.testing.assert_array_equal(a.grad, first)


# -- properties -------------------------------------------------------------------

UNARY = {
    "tanh": T.tanh_elem,
    "exp": T.exp_elem,
    "neg": T.neg,
    "scale": lambda a: T.scale(a, -1.7),
    "shift": lambda a: T.shift(a, 0.4),
    "softmax": T.softmax_rows,
    "transpose": T.transpose,
    "reshape": lambda a: T.reshape(a, (a.size,)),
    "sum_axis0": lambda a: T.sum_axis(a, 0),
    "sum_axis1": lambda a: T.sum_axis(a, 1),
    "mean_all": T.mean_all,
    "slice": lambda a: T.slice_cols(a, 1, 3),
    "gather": lambda a: T.gather_rows(a, np.array([[0, 2], [1, 1]])),
    "clip": lambda a: T.clip(a, -0.5, 0.5),
}

BINARY = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "minimum": T.minimum,
    "concat_cols": lambda a, b: T.concat_cols([a, b]),
    "concat0": lambda a, b: T.concat([a, b], axis=0),
}


@pytest.mark.parametrize("name", sorted(UNARY))
@settings(max_examples=15, deadline=None)
@given(x=mat((3, 4)))
def test_unary_ops_match_finite_differences(name, x):
    if name == "clip":
        # keep away from the kinks where the derivative is undefined
        x = np.where(np.abs(np.abs(x) - 0.5) < 1e-3, x + 0.01, x)
    check_grad(UNARY[name], x)


@pytest.mark.parametrize("name", sorted(BINARY))
@settings(max_examples=15, deadline=None)
@given(x=mat((3, 4)), y=mat((3, 4)))
def test_binary_ops_match_finite_differences(name, x, y):
    if name == "minimum":
        y = np.where(np.abs(x - y) < 1e-3, y + 0.01, y)
    check_grad(BINARY[name], x, y)


@settings(max_examples=15, deadline=None)
@given(x=mat((2, 3)), y=mat((3, 4)))
def test_matmul_matches_finite_differences(x, y):
    check_grad(T.matmul, x, y)


@settings(max_examples=15, deadline=None)
@given(x=mat((2, 3, 2)), y=mat((2, 2, 4)))
def test_bmm_matches_finite_differences(x, y):
    check_grad(T.bmm, x, y)


@settings(max_examples=15, deadline=None)
@given(x=arrays(np.float64, (3, 4), elements=st.floats(0.1, 2.0)))
def test_log_matches_finite_differences(x):
    check_grad(T.log_elem, x)


@settings(max_examples=50, deadline=None)
@given(x=mat((4, 5)), c=finite)
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    s = T.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((s > 0) & (s < 1))
    np.testing.assert_allclose(T.softmax_rows(Tensor(x + c)).data, s, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(x=mat((3, 3)))
def test_backward_is_deterministic(x):
    grads = []
    for _ in range(2):
        a = Tensor(x, requires_grad=True)
        T.backward(T.sum_all(T.tanh_elem(T.matmul(T.softmax_rows(a), a))))
        grads.append(a.grad)
    assert np.array_equal(grads[0], grads[1])


def test_intermediate_tensors_get_gradients():
    a = Tensor([[1.0, -2.0]], requires_grad=True)
    h = T.tanh_elem(a)
    T.backward(T.sum_all(h))
    assert h.grad is not None and h.grad.shape == h.shape


def test_no_broadcasting():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((1, 2))))
