"""Minimal reverse-mode automatic differentiation.

Only the primitives the unrolled network needs: 3x3 same-padding
convolution, ReLU, softplus, soft thresholding, same-shape arithmetic,
scalar scaling, reshapes, linear-operator application, and the two loss
reductions.  No broadcasting (scale() is the single scalar-times-tensor
case), no higher-order derivatives.

Graphs are plain Node objects holding (parent, vjp) links; backward()
walks reverse topological order and sums gradients into .grad, so calling
it twice without clearing doubles them.
"""

import numpy as np

from .errors import ShapeError


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_links")

    def __init__(self, value, links=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._links = tuple(links)

    @property
    def shape(self):
        return self.value.shape


class Parameter:
    """Named learnable leaf."""

    def __init__(self, name, value):
        self.name = name
        self.node = Node(value, requires_grad=True)

    @property
    def value(self):
        return self.node.value

    @value.setter
    def value(self, v):
        self.node.value = np.asarray(v, dtype=np.float64)

    def clear_grad(self):
        self.node.grad = None


def constant(value):
    return Node(value, requires_grad=False)


def _result(value, links):
    live = [(p, vjp) for p, vjp in links if p.requires_grad]
    return Node(value, links=live, requires_grad=bool(live))


def _check_same(a, b, what):
    if a.value.shape != b.value.shape:
        raise ShapeError(
            "%s needs equal shapes, got %r and %r"
            % (what, a.value.shape, b.value.shape)
        )


def add(a, b):
    _check_same(a, b, "add")
    return _result(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b):
    _check_same(a, b, "sub")
    return _result(a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a, b):
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return _result(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def div(a, b):
    _check_same(a, b, "div")
    av, bv = a.value, b.value
    return _result(
        av / bv,
        [(a, lambda g: g / bv), (b, lambda g: -g * av / (bv * bv))],
    )


def scale(x, s):
    """x times a scalar node; the only broadcasting primitive."""
    if s.value.size != 1:
        raise ShapeError("scale factor must be a scalar node")
    xv, sv = x.value, float(s.value.reshape(-1)[0])
    return _result(
        xv * sv,
        [
            (x, lambda g: g * sv),
            (s, lambda g: np.sum(g * xv).reshape(s.value.shape)),
        ],
    )


def reshape(x, shape):
    shape = tuple(shape)
    old = x.value.shape
    if int(np.prod(shape)) != x.value.size:
        raise ShapeError("cannot reshape %r to %r" % (old, shape))
    return _result(x.value.reshape(shape), [(x, lambda g: g.reshape(old))])


def sum_node(x):
    """Total sum as a scalar node of shape (1,)."""
    shape = x.value.shape
    return _result(
        np.array([np.sum(x.value)]),
        [(x, lambda g: np.full(shape, float(g.reshape(-1)[0])))],
    )


def relu(x):
    """max(x, 0); gradient is zero at exactly 0 (stated convention)."""
    mask = x.value > 0.0
    return _result(np.where(mask, x.value, 0.0), [(x, lambda g: g * mask)])


def softplus(x):
    """log(1 + exp(x)) in the overflow-safe form; derivative = sigmoid."""
    v = x.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    # sigmoid via the same stable trick
    e = np.exp(-np.abs(v))
    sig = np.where(v >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, [(x, lambda g: g * sig)])


def soft_threshold_node(x, theta):
    """Shrinkage with subgradient 0 inside the dead zone.

    d/dx = 1 where |x| > theta, d/dtheta = -sign(x) there; both zero at and
    inside the kink.
    """
    if theta.value.size != 1:
        raise ShapeError("theta must be a scalar node")
    t = float(theta.value.reshape(-1)[0])
    v = x.value
    sgn = np.sign(v)
    out = sgn * np.maximum(np.abs(v) - t, 0.0)
    mask = np.abs(v) > t
    return _result(
        out,
        [
            (x, lambda g: g * mask),
            (
                theta,
                lambda g: np.array([-np.sum(g * sgn * mask)]).reshape(
                    theta.value.shape
                ),
            ),
        ],
    )


def conv2d(x, k):
    """3x3 cross-correlation, stride 1, zero padding 1, no bias.

    x: [B, C_in, H, W], k: [C_out, C_in, 3, 3] -> [B, C_out, H, W].
    """
    from . import _kernels

    xv, kv = x.value, k.value
    if xv.ndim != 4 or kv.ndim != 4 or kv.shape[2:] != (3, 3):
        raise ShapeError(
            "conv2d wants x [B,C,H,W] and k [Co,C,3,3], got %r and %r"
            % (xv.shape, kv.shape)
        )
    if kv.shape[1] != xv.shape[1]:
        raise ShapeError(
            "channel mismatch: input has %d, kernel expects %d"
            % (xv.shape[1], kv.shape[1])
        )
    out = _kernels.conv3x3_fwd(xv, kv)
    return _result(
        out,
        [
            (x, lambda g: _kernels.conv3x3_grad_input(g, kv)),
            (k, lambda g: _kernels.conv3x3_grad_kernel(xv, g)),
        ],
    )


def apply_operator(op, x, adjoint=False):
    """Apply a fixed linear operator batch-wise; no gradient into op.

    x: [B] + op.in_shape (or out_shape when adjoint).  The backward rule is
    the matched transpose, exact because the operator pairs are matched.
    """
    xv = x.value
    in_shape = op.out_shape if adjoint else op.in_shape
    if xv.shape[1:] != in_shape:
        raise ShapeError(
            "operator input shape %r does not match batch %r"
            % (in_shape, xv.shape)
        )
    if adjoint:
        out = op.adjoint_batch(xv)
        return _result(out, [(x, lambda g: op.apply_batch(g))])
    out = op.apply_batch(xv)
    return _result(out, [(x, lambda g: op.adjoint_batch(g))])


def mse(a, b):
    """Sum of squared differences (no averaging), scalar node."""
    _check_same(a, b, "mse")
    d = a.value - b.value
    return _result(
        np.array([np.sum(d * d)]),
        [
            (a, lambda g: (2.0 * float(g.reshape(-1)[0])) * d),
            (b, lambda g: (-2.0 * float(g.reshape(-1)[0])) * d),
        ],
    )


def l1_norm(a):
    """Sum of absolute values; sign subgradient (0 at 0)."""
    sgn = np.sign(a.value)
    return _result(
        np.array([np.sum(np.abs(a.value))]),
        [(a, lambda g: float(g.reshape(-1)[0]) * sgn)],
    )


def backward(loss):
    """Populate .grad over the graph below a scalar loss.

    Gradients accumulate by summation, both across fan-out within one pass
    and across repeated backward calls.
    """
    if loss.value.size != 1:
        raise ShapeError("backward needs a scalar loss, got %r" % (loss.shape,))

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._links:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))

    pending = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        node.grad = node.grad + g
        for parent, vjp in node._links:
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
