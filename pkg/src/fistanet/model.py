"""The unrolled accelerated-shrinkage network.

Each of the N_s layers repeats three blocks:

    r^(k) = y^(k) - mu^(k) * W^T (A y^(k) - b)          gradient step
    x^(k) = r^(k) + Ft(soft(F(r^(k)), theta^(k)))       learned prox
    y^(k+1) = x^(k) + rho^(k) (x^(k) - x^(k-1))         momentum

F = conv2(relu(conv1(.))), Ft = conv4(relu(conv3(.))), all 3x3, no bias,
one shared copy of the weights across layers.  The scalars mu, theta, rho
follow softplus schedules in the layer index k so positivity and
monotonicity can be enforced structurally.
"""

import dataclasses
import math
import struct

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ShapeError
from .operators import matrix_operator
from .tensor import tensor_from_bytes, tensor_to_bytes

SIGN_MODES = ("reparam", "clamp", "free")

# effective schedule coefficients at initialization
_INIT_W1, _INIT_W2, _INIT_W3 = -0.5, -0.2, 1.0
_INIT_C1, _INIT_C2, _INIT_C3 = -2.0, -1.0, 0.0


def _inv_softplus(y):
    # solve softplus(v) = y for y > 0
    return math.log(math.expm1(y))


class ScheduleParams:
    """Six raw scalars behind the mu/theta/rho schedules.

    reparam: effective w1 = -softplus(v1), w2 = -softplus(v2),
    w3 = +softplus(v3), so the sign constraints hold for any raw value.
    clamp: raw values are used directly and the trainer projects them back
    to the feasible sign after each step.  free: no enforcement at all.
    """

    def __init__(self, sign_mode="reparam"):
        if sign_mode not in SIGN_MODES:
            raise ValueError("sign_mode must be one of %r" % (SIGN_MODES,))
        self.sign_mode = sign_mode
        if sign_mode == "reparam":
            v1 = _inv_softplus(-_INIT_W1)
            v2 = _inv_softplus(-_INIT_W2)
            v3 = _inv_softplus(_INIT_W3)
        else:
            v1, v2, v3 = _INIT_W1, _INIT_W2, _INIT_W3
        self.v1 = ad.Parameter("v1", np.array([v1]))
        self.c1 = ad.Parameter("c1", np.array([_INIT_C1]))
        self.v2 = ad.Parameter("v2", np.array([v2]))
        self.c2 = ad.Parameter("c2", np.array([_INIT_C2]))
        self.v3 = ad.Parameter("v3", np.array([v3]))
        self.c3 = ad.Parameter("c3", np.array([_INIT_C3]))

    def parameters(self):
        return [self.v1, self.c1, self.v2, self.c2, self.v3, self.c3]

    def effective_slopes(self):
        """Nodes for (w1, w2, w3) under the active sign mode."""
        neg1 = ad.constant(np.array([-1.0]))
        if self.sign_mode == "reparam":
            w1 = ad.scale(ad.softplus(self.v1.node), neg1)
            w2 = ad.scale(ad.softplus(self.v2.node), neg1)
            w3 = ad.softplus(self.v3.node)
        else:
            w1, w2, w3 = self.v1.node, self.v2.node, self.v3.node
        return w1, w2, w3

    def project_signs(self):
        """Post-step projection used by clamp mode (no-op otherwise)."""
        if self.sign_mode != "clamp":
            return
        self.v1.value = np.minimum(self.v1.value, 0.0)
        self.v2.value = np.minimum(self.v2.value, 0.0)
        self.v3.value = np.maximum(self.v3.value, 0.0)


def schedule_eval(params, k, n_layers):
    """(mu_k, theta_k, rho_k) as differentiable scalar nodes."""
    if not 1 <= k <= n_layers:
        raise ValueError("layer index %d out of range 1..%d" % (k, n_layers))
    w1, w2, w3 = params.effective_slopes()
    kf = ad.constant(np.array([float(k)]))
    mu = ad.softplus(ad.add(ad.scale(w1, kf), params.c1.node))
    theta = ad.softplus(ad.add(ad.scale(w2, kf), params.c2.node))
    sp_k = ad.softplus(ad.add(ad.scale(w3, kf), params.c3.node))
    if k == 1:
        sp_1 = sp_k  # same node: the difference below is exactly zero
    else:
        one = ad.constant(np.array([1.0]))
        sp_1 = ad.softplus(ad.add(ad.scale(w3, one), params.c3.node))
    rho = ad.div(ad.sub(sp_k, sp_1), sp_k)
    return mu, theta, rho


class ProxNetWeights:
    """The four shared conv kernels (no bias, no normalization)."""

    def __init__(self, nf, rng):
        if nf < 1:
            raise ValueError("nf must be >= 1")
        self.nf = nf
        self.conv1 = ad.Parameter("conv1", _xavier(rng, nf, 1))
        self.conv2 = ad.Parameter("conv2", _xavier(rng, nf, nf))
        self.conv3 = ad.Parameter("conv3", _xavier(rng, nf, nf))
        self.conv4 = ad.Parameter("conv4", _xavier(rng, 1, nf))

    def parameters(self):
        return [self.conv1, self.conv2, self.conv3, self.conv4]


def _xavier(rng, c_out, c_in):
    """Xavier-uniform 3x3 kernel bank [c_out, c_in, 3, 3]."""
    fan_in = c_in * 9
    fan_out = c_out * 9
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return (rng.uniform((c_out, c_in, 3, 3)) * 2.0 - 1.0) * limit


class FistaNetModel:
    """Operator, gradient matrix, schedules, and shared prox weights."""

    def __init__(self, op, W, n_layers, nf, sign_mode, rng):
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        self.op = op
        self.n_layers = n_layers
        self.mode = "physical" if W is None else "analytic"
        if W is None:
            self.W = None
            self.grad_op = None  # W^T application falls back to op.adjoint
        else:
            W = np.asarray(W, dtype=np.float64)
            if W.shape != (op.out_size, op.in_size):
                raise ShapeError(
                    "W shape %r does not conform to operator (%d, %d)"
                    % (W.shape, op.out_size, op.in_size)
                )
            self.W = W
            self.grad_op = matrix_operator(
                W.T, in_shape=op.out_shape, out_shape=op.in_shape
            )
        self.schedule = ScheduleParams(sign_mode)
        self.prox = ProxNetWeights(nf, rng)

    def parameters(self):
        return self.prox.parameters() + self.schedule.parameters()

    def conv_parameters(self):
        return self.prox.parameters()

    def schedule_parameters(self):
        return self.schedule.parameters()

    def clear_grads(self):
        for p in self.parameters():
            p.clear_grad()


def count_parameters(model):
    return sum(p.value.size for p in model.parameters())


def gradient_module(model, y, b_const, mu):
    """r = y - mu * W^T (A y - b); only y and mu carry gradient."""
    batch = y.value.shape[0]
    img = ad.reshape(y, (batch,) + model.op.in_shape)
    resid = ad.sub(ad.apply_operator(model.op, img), b_const)
    if model.grad_op is None:
        corr = ad.apply_operator(model.op, resid, adjoint=True)
    else:
        corr = ad.apply_operator(model.grad_op, resid)
    corr = ad.reshape(corr, y.value.shape)
    return ad.sub(y, ad.scale(corr, mu))


def prox_module(model, r, theta):
    """x = r + Ft(soft(F(r), theta)); returns (x, F(r)) for the loss."""
    if r.value.ndim != 4 or r.value.shape[1] != 1:
        raise ShapeError("prox input must be [B,1,H,W], got %r" % (r.shape,))
    f_r = ad.conv2d(ad.relu(ad.conv2d(r, model.prox.conv1.node)), model.prox.conv2.node)
    z = ad.soft_threshold_node(f_r, theta)
    ft_z = ad.conv2d(ad.relu(ad.conv2d(z, model.prox.conv3.node)), model.prox.conv4.node)
    return ad.add(r, ft_z), f_r


def _ft_pass(model, z):
    # the decoder half applied without thresholding (loss terms)
    return ad.conv2d(ad.relu(ad.conv2d(z, model.prox.conv3.node)), model.prox.conv4.node)


@dataclasses.dataclass
class ForwardResult:
    x_final: object  # Node [B,1,H,W]
    intermediates: list  # numpy [B,H,W] per layer
    layer_r: list  # Node per layer
    layer_f: list  # Node F(r) per layer
    schedules: list  # (mu, theta, rho) float triples per layer


def forward(model, b, x0, schedule_override=None):
    """Run the unrolled network on a batch.

    b: [batch] + op.out_shape measurements; x0: [batch] + op.in_shape warm
    start.  schedule_override, when given, is a list of (mu, theta, rho)
    floats per layer replacing the learned schedules (used by the classical
    equivalence tests).
    """
    b = np.asarray(b, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape[1:] != model.op.in_shape:
        raise ShapeError(
            "x0 shape %r does not match operator input %r"
            % (x0.shape, model.op.in_shape)
        )
    if b.shape[1:] != model.op.out_shape or b.shape[0] != x0.shape[0]:
        raise ShapeError(
            "b shape %r does not match operator output %r / batch %d"
            % (b.shape, model.op.out_shape, x0.shape[0])
        )
    if len(model.op.in_shape) != 2:
        raise ShapeError(
            "the unrolled network needs a 2-D image domain, got %r"
            % (model.op.in_shape,)
        )
    batch = x0.shape[0]
    h, w = model.op.in_shape
    b_const = ad.constant(b)
    x_prev = ad.constant(x0.reshape(batch, 1, h, w))
    y = x_prev
    intermediates = []
    layer_r = []
    layer_f = []
    schedules = []
    for k in range(1, model.n_layers + 1):
        if schedule_override is None:
            mu, theta, rho = schedule_eval(model.schedule, k, model.n_layers)
        else:
            mu_v, theta_v, rho_v = schedule_override[k - 1]
            mu = ad.constant(np.array([float(mu_v)]))
            theta = ad.constant(np.array([float(theta_v)]))
            rho = ad.constant(np.array([float(rho_v)]))
        r = gradient_module(model, y, b_const, mu)
        x, f_r = prox_module(model, r, theta)
        y = ad.add(x, ad.scale(ad.sub(x, x_prev), rho))
        x_prev = x
        intermediates.append(x.value.reshape(batch, h, w).copy())
        layer_r.append(r)
        layer_f.append(f_r)
        schedules.append(
            (
                float(mu.value[0]),
                float(theta.value[0]),
                float(rho.value[0]),
            )
        )
    return ForwardResult(
        x_final=x_prev,
        intermediates=intermediates,
        layer_r=layer_r,
        layer_f=layer_f,
        schedules=schedules,
    )


def total_loss(model, result, x_gt, lambda1=0.01, lambda2=0.001):
    """Reconstruction + symmetry + sparsity loss, summed over the batch.

    L = ||x_final - x_gt||^2 + lambda1 * sum_k ||Ft(F(r_k)) - r_k||^2
      + lambda2 * sum_k ||F(r_k)||_1, all squared norms as plain sums.
    """
    x_gt = np.asarray(x_gt, dtype=np.float64)
    gt_const = ad.constant(x_gt.reshape(result.x_final.value.shape))
    loss = ad.mse(result.x_final, gt_const)
    lam1 = ad.constant(np.array([float(lambda1)]))
    lam2 = ad.constant(np.array([float(lambda2)]))
    for r, f_r in zip(result.layer_r, result.layer_f):
        sym = ad.mse(_ft_pass(model, f_r), r)
        loss = ad.add(loss, ad.scale(sym, lam1))
        loss = ad.add(loss, ad.scale(ad.l1_norm(f_r), lam2))
    return loss


_CKPT_NAMES = ("conv1", "conv2", "conv3", "conv4", "v1", "c1", "v2", "c2", "v3", "c3")


def save_checkpoint(model, path):
    """Binary container of named FTNS blobs plus a text sidecar."""
    entries = {
        "conv1": model.prox.conv1.value,
        "conv2": model.prox.conv2.value,
        "conv3": model.prox.conv3.value,
        "conv4": model.prox.conv4.value,
        "v1": model.schedule.v1.value,
        "c1": model.schedule.c1.value,
        "v2": model.schedule.v2.value,
        "c2": model.schedule.c2.value,
        "v3": model.schedule.v3.value,
        "c3": model.schedule.c3.value,
    }
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(_CKPT_NAMES)))
        for name in _CKPT_NAMES:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(tensor_to_bytes(entries[name]))
    with open(path + ".meta", "w") as fh:
        fh.write("n_layers=%d\n" % model.n_layers)
        fh.write("nf=%d\n" % model.prox.nf)
        fh.write("sign_mode=%s\n" % model.schedule.sign_mode)
        fh.write("mode=%s\n" % model.mode)


def load_checkpoint(path):
    """Returns (tensors by name, meta dict). Use model_from_checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError("%s: truncated checkpoint" % path)
    (count,) = struct.unpack("<I", raw[:4])
    off = 4
    tensors = {}
    for _ in range(count):
        if off + 2 > len(raw):
            raise FormatError("%s: truncated entry header" % path)
        (nlen,) = struct.unpack("<H", raw[off : off + 2])
        off += 2
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        if off + 8 > len(raw):
            raise FormatError("%s: truncated tensor header" % path)
        ndim = raw[off + 6]
        need = 8 + 4 * ndim
        dims = struct.unpack("<%dI" % ndim, raw[off + 8 : off + need])
        n = 1
        for d in dims:
            n *= d
        blob = raw[off : off + need + 8 * n]
        tensors[name] = tensor_from_bytes(blob, "%s[%s]" % (path, name))
        off += need + 8 * n
    if off != len(raw):
        raise FormatError("%s: %d trailing bytes" % (path, len(raw) - off))
    missing = [n for n in _CKPT_NAMES if n not in tensors]
    if missing:
        raise FormatError("%s: missing entries %r" % (path, missing))
    meta = {}
    try:
        with open(path + ".meta") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                key, val = line.split("=", 1)
                meta[key] = val
    except FileNotFoundError:
        raise FormatError("%s.meta: sidecar not found" % path)
    meta["n_layers"] = int(meta["n_layers"])
    meta["nf"] = int(meta["nf"])
    return tensors, meta


def model_from_checkpoint(op, W, tensors, meta):
    """Rebuild a model around an operator from load_checkpoint output."""
    from .rng import Rng

    model = FistaNetModel(
        op, W, meta["n_layers"], meta["nf"], meta["sign_mode"], Rng(0)
    )
    model.prox.conv1.value = tensors["conv1"]
    model.prox.conv2.value = tensors["conv2"]
    model.prox.conv3.value = tensors["conv3"]
    model.prox.conv4.value = tensors["conv4"]
    model.schedule.v1.value = tensors["v1"]
    model.schedule.c1.value = tensors["c1"]
    model.schedule.v2.value = tensors["v2"]
    model.schedule.c2.value = tensors["c2"]
    model.schedule.v3.value = tensors["v3"]
    model.schedule.c3.value = tensors["c3"]
    return model
