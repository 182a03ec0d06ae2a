import numpy as np
import pytest

from fistanet.autodiff import (
    Node,
    Parameter,
    add,
    apply_operator,
    backward,
    constant,
    conv2d,
    div,
    l1_norm,
    mse,
    mul,
    relu,
    reshape,
    scale,
    soft_threshold_node,
    softplus,
    sub,
    sum_node,
)
from fistanet.errors import ShapeError
from fistanet.operators import matrix_operator
from fistanet.rng import Rng


def leaf(value):
    return Node(np.asarray(value, dtype=np.float64), requires_grad=True)


def numeric_grad(f, x, h=1e-5):
    """Central finite differences of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_grad(build, x0, tol=1e-5, h=1e-5):
    """build(node) -> scalar node; compares backward grad to central FD."""
    x = leaf(x0.copy())
    loss = build(x)
    backward(loss)
    analytic = x.grad.copy()

    def f(arr):
        return float(build(Node(arr.copy())).value.sum())

    numeric = numeric_grad(f, x0, h)
    scale_ = max(np.abs(numeric).max(), 1e-8)
    assert np.abs(analytic - numeric).max() <= tol * scale_


# ------------------------------------------------------------- graph laws

def test_linear_chain():
    x = leaf([2.0])
    y = scale(x, constant(np.array([3.0])))
    backward(y)
    assert x.grad[0] == 3.0


def test_diamond_accumulation():
    x = leaf([1.5])
    y = add(x, x)
    backward(y)
    assert x.grad[0] == 2.0


def test_backward_twice_doubles():
    x = leaf([1.0, 2.0])
    loss = mse(x, constant(np.zeros(2)))
    backward(loss)
    g1 = x.grad.copy()
    backward(loss)
    assert np.array_equal(x.grad, 2.0 * g1)


def test_backward_needs_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(ShapeError):
        backward(add(x, x))


def test_forward_value_independent_of_grad_flag():
    arr = Rng(1).normal((2, 1, 4, 4))
    k = Rng(2).normal((3, 1, 3, 3))
    a = conv2d(Node(arr, requires_grad=True), Node(k, requires_grad=True))
    b = conv2d(Node(arr), Node(k))
    assert np.array_equal(a.value, b.value)


# ------------------------------------------------------------- primitives

def test_add_sub_mul_div_values_and_grads():
    rng = Rng(3)
    a0 = rng.normal(6)
    b0 = rng.normal(6) + 3.0  # keep away from zero for div
    check_grad(lambda x: sum_node(mul(x, constant(b0))), a0)
    check_grad(lambda x: sum_node(div(x, constant(b0))), a0)
    check_grad(lambda x: sum_node(sub(x, constant(b0))), a0)
    check_grad(lambda x: sum_node(add(x, constant(b0))), a0)


def test_relu_value_and_gradient_convention():
    x = leaf([-1.0, 0.0, 2.0])
    y = relu(x)
    assert np.array_equal(y.value, [0.0, 0.0, 2.0])
    backward(sum_node(y))
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])  # zero at the kink


def test_relu_fd_away_from_kink():
    rng = Rng(4)
    x0 = rng.normal(40)
    x0 = x0[np.abs(x0) > 1e-3][:20]
    check_grad(lambda x: sum_node(relu(x)), x0, tol=1e-6)


def test_softplus_values():
    x = leaf([0.0, 30.0, -30.0])
    y = softplus(x)
    assert abs(y.value[0] - np.log(2.0)) <= 1e-15
    assert abs(y.value[1] - 30.0) <= 1e-13
    assert y.value[2] > 0.0
    backward(sum_node(y))
    assert abs(x.grad[0] - 0.5) <= 1e-15


def test_softplus_fd():
    check_grad(lambda x: sum_node(softplus(x)), Rng(5).normal(20), tol=1e-6)


def test_soft_threshold_node_forward_matches_solver():
    from fistanet.solvers import soft_threshold

    x0 = Rng(6).normal(30)
    out = soft_threshold_node(Node(x0), constant(np.array([0.4]))).value
    assert np.array_equal(out, soft_threshold(x0, 0.4))


def test_soft_threshold_node_grads():
    rng = Rng(7)
    theta = 0.3
    x0 = rng.normal(50)
    x0 = x0[np.abs(np.abs(x0) - theta) > 1e-3][:20]
    check_grad(
        lambda x: sum_node(soft_threshold_node(x, constant(np.array([theta])))), x0
    )
    # gradient w.r.t. theta: -sum over active entries of sign(x)
    th = leaf([theta])
    x = Node(x0)
    backward(sum_node(soft_threshold_node(x, th)))
    active = np.abs(x0) > theta
    assert abs(th.grad[0] - (-np.sign(x0)[active].sum())) <= 1e-12


def test_soft_threshold_zero_theta_identity():
    x = leaf(Rng(8).normal(10))
    y = soft_threshold_node(x, constant(np.array([0.0])))
    assert np.array_equal(y.value, x.value)
    backward(sum_node(y))
    assert np.array_equal(x.grad, np.ones(10))


def test_conv2d_identity_kernel():
    x0 = Rng(9).normal((1, 1, 5, 5))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    y = conv2d(Node(x0), Node(k))
    assert np.abs(y.value - x0).max() <= 1e-15
    z = conv2d(Node(x0), Node(np.zeros((2, 1, 3, 3))))
    assert np.all(z.value == 0.0)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        conv2d(Node(np.zeros((1, 2, 4, 4))), Node(np.zeros((3, 1, 3, 3))))


def test_conv2d_fd_input_and_kernel():
    rng = Rng(10)
    x0 = rng.normal((1, 2, 5, 5))
    k0 = rng.normal((3, 2, 3, 3))
    w = rng.normal((1, 3, 5, 5))
    check_grad(lambda x: sum_node(mul(conv2d(x, constant(k0)), constant(w))), x0)
    check_grad(lambda k: sum_node(mul(conv2d(constant(x0), k), constant(w))), k0)


def test_mse_l1_values_and_grads():
    a = leaf([1.0, -2.0])
    assert mse(a, Node(np.array([1.0, -2.0]))).value[0] == 0.0
    assert l1_norm(Node(np.array([-2.0, 3.0]))).value[0] == 5.0
    rng = Rng(12)
    x0 = rng.normal(15)
    ref = rng.normal(15)
    check_grad(lambda x: mse(x, constant(ref)), x0)
    x1 = x0[np.abs(x0) > 1e-3]
    check_grad(lambda x: l1_norm(x), x1)


def test_mse_zero_grad_at_match():
    x = leaf([0.5, -0.5])
    loss = mse(x, constant(np.array([0.5, -0.5])))
    backward(loss)
    assert np.array_equal(x.grad, np.zeros(2))


def test_combined_loss_gradcheck():
    rng = Rng(13)
    x0 = rng.normal(12)
    x0 = x0[np.abs(x0) > 1e-3]
    ref = rng.normal(x0.size)

    def build(x):
        return add(
            scale(mse(x, constant(ref)), constant(np.array([0.01]))),
            scale(l1_norm(x), constant(np.array([0.001]))),
        )

    check_grad(build, x0)


def test_scale_gradient_into_scalar():
    s = leaf([2.0])
    x0 = Rng(14).normal(7)
    loss = sum_node(scale(constant(x0), s))
    backward(loss)
    assert abs(s.grad[0] - x0.sum()) <= 1e-12


def test_reshape_roundtrip_grad():
    x0 = Rng(15).normal((3, 4))
    check_grad(lambda x: sum_node(mul(reshape(x, (12,)), constant(np.arange(12.0)))), x0)


def test_apply_operator_forward_and_adjoint_grad():
    A = Rng(16).normal((5, 9))
    op = matrix_operator(A, in_shape=(3, 3), out_shape=(5,))
    x0 = Rng(17).normal((2, 3, 3))
    w = Rng(18).normal((2, 5))
    check_grad(
        lambda x: sum_node(mul(apply_operator(op, x), constant(w))), x0
    )
    y0 = Rng(19).normal((2, 5))
    w2 = Rng(20).normal((2, 3, 3))
    check_grad(
        lambda y: sum_node(mul(apply_operator(op, y, adjoint=True), constant(w2))), y0
    )


def test_parameter_naming_and_clear():
    p = Parameter("k", np.ones(3))
    assert p.name == "k"
    loss = sum_node(p.node)
    backward(loss)
    assert np.array_equal(p.node.grad, np.ones(3))
    p.clear_grad()
    assert p.node.grad is None
