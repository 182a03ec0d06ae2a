"""Classical model-based reconstruction solvers.

Everything here minimizes F(x) = 0.5*||Ax - b||^2 + lambda*R(x) for a linear
operator A.  ISTA/FISTA use R = ||x||_1 in the identity basis, FISTA-TV uses
isotropic total variation with an inner dual fast-gradient-projection prox,
and laplacian_init solves the quadratic Laplacian-regularized problem by
conjugate gradient to produce warm starts.
"""

import dataclasses
import math

import numpy as np

from .errors import ConvergenceError, ShapeError
from .operators import LaplacianOperator
from .rng import Rng


@dataclasses.dataclass
class SolverConfig:
    """Iteration budget and regularization knobs shared by the solvers.

    step_size=None means automatic: 1/L with L from power iteration on A^T A
    (including its safety multiplier).  tol is a relative-change stopping
    threshold; tol=0 disables early stopping.
    """

    max_iters: int = 100
    step_size: float = None
    reg_lambda: float = 0.0
    tol: float = 0.0
    record_trace: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive when given")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclasses.dataclass
class SolverTrace:
    objective: list = dataclasses.field(default_factory=list)
    rmse: list = dataclasses.field(default_factory=list)
    snapshots: list = dataclasses.field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,objective,rmse\n")
            for i, (obj, err) in enumerate(zip(self.objective, self.rmse)):
                fh.write("%d,%.17g,%.17g\n" % (i + 1, obj, err))


def soft_threshold(x, alpha):
    """sign(x) * max(|x| - alpha, 0), the prox of alpha*||.||_1."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)


def hard_threshold(x, alpha):
    """Keep entries with |x_i| >= alpha, zero the rest."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) >= alpha, x, 0.0)


def power_iteration_L(op, iters=50, rng=None):
    """Largest eigenvalue of A^T A, times a 1.05 safety factor.

    The Rayleigh quotient of power iteration on a PSD matrix is
    non-decreasing, so longer runs never report a smaller bound.
    """
    if iters < 10:
        raise ValueError("iters must be >= 10")
    if rng is None:
        rng = Rng(0)
    z = rng.normal(op.in_size)
    nz = float(np.linalg.norm(z))
    if nz == 0.0:
        z = np.ones(op.in_size) / math.sqrt(op.in_size)
    else:
        z = z / nz
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint_vec(op.apply_vec(z))
        lam = float(np.dot(z, w))
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        z = w / nw
    return 1.05 * lam


def tv_iso(x):
    """Isotropic TV with forward differences and Neumann boundary."""
    x = np.asarray(x, dtype=np.float64)
    dy = np.zeros_like(x)
    dx = np.zeros_like(x)
    dy[:-1, :] = x[1:, :] - x[:-1, :]
    dx[:, :-1] = x[:, 1:] - x[:, :-1]
    return float(np.sum(np.sqrt(dy * dy + dx * dx)))


def _tv_div(p, q, shape):
    # adjoint of the forward-difference gradient (negated), zero-padded duals
    z = np.zeros(shape, dtype=np.float64)
    z[:-1, :] += p
    z[1:, :] -= p
    z[:, :-1] += q
    z[:, 1:] -= q
    return z


def tv_prox(v, lambda_tv, inner_iters=20):
    """Prox of lambda_tv * TV_iso at v, by dual fast gradient projection."""
    if lambda_tv < 0:
        raise ValueError("lambda_tv must be >= 0")
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    v = np.asarray(v, dtype=np.float64)
    if lambda_tv == 0.0:
        return v.copy()
    h, w = v.shape
    p = np.zeros((h - 1, w), dtype=np.float64)
    q = np.zeros((h, w - 1), dtype=np.float64)
    rp, rq = p, q
    t = 1.0
    step = 1.0 / (8.0 * lambda_tv)
    for _ in range(inner_iters):
        u = v - lambda_tv * _tv_div(rp, rq, v.shape)
        cp = rp - step * (u[1:, :] - u[:-1, :])
        cq = rq - step * (u[:, 1:] - u[:, :-1])
        # isotropic projection onto ||(p,q)_ij||_2 <= 1 per pixel
        norm = np.ones(v.shape, dtype=np.float64)
        mag = np.zeros(v.shape, dtype=np.float64)
        mag[:-1, :] += cp * cp
        mag[:, :-1] += cq * cq
        np.sqrt(mag, out=mag)
        np.maximum(norm, mag, out=norm)
        p_new = cp / norm[:-1, :]
        q_new = cq / norm[:, :-1]
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        beta = (t - 1.0) / t_next
        rp = p_new + beta * (p_new - p)
        rq = q_new + beta * (q_new - q)
        p, q, t = p_new, q_new, t_next
    return v - lambda_tv * _tv_div(p, q, v.shape)


def _check_measurement(op, b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != op.out_shape:
        raise ShapeError(
            "measurement shape %r does not match operator output %r"
            % (b.shape, op.out_shape)
        )
    return b


def _resolve_step(op, cfg):
    if cfg.step_size is not None:
        return cfg.step_size
    return 1.0 / power_iteration_L(op, iters=50, rng=Rng(0))


def _rmse_or_nan(x, x_ref):
    if x_ref is None:
        return float("nan")
    d = x - x_ref
    return math.sqrt(float(np.mean(d * d)))


def _run_prox_gradient(op, b, cfg, x0, x_ref, prox, objective, extrapolation):
    """Shared ISTA/FISTA loop.

    With extrapolation disabled the extrapolated point is the plain iterate,
    which makes the run identical to ISTA step for step.
    """
    b = _check_measurement(op, b)
    mu = _resolve_step(op, cfg)
    if x0 is None:
        x_prev = np.zeros(op.in_shape, dtype=np.float64)
    else:
        x_prev = np.asarray(x0, dtype=np.float64).copy()
        if x_prev.shape != op.in_shape:
            raise ShapeError(
                "warm start shape %r does not match operator input %r"
                % (x_prev.shape, op.in_shape)
            )
    y = x_prev.copy()
    t = 1.0
    trace = SolverTrace()
    x = x_prev
    for _ in range(cfg.max_iters):
        grad = op.adjoint(op.apply(y) - b)
        x = prox(y - mu * grad, mu)
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        if extrapolation:
            y = x + ((t - 1.0) / t_next) * (x - x_prev)
        else:
            y = x.copy()
        if cfg.record_trace:
            trace.objective.append(objective(x))
            trace.rmse.append(_rmse_or_nan(x, x_ref))
        rel = float(np.linalg.norm(x - x_prev)) / max(
            float(np.linalg.norm(x_prev)), 1e-12
        )
        x_prev = x
        t = t_next
        if cfg.tol > 0 and rel < cfg.tol:
            break
    return x, trace


def _l1_objective(op, b, lam):
    def objective(x):
        r = op.apply(x) - b
        return 0.5 * float(np.sum(r * r)) + lam * float(np.sum(np.abs(x)))

    return objective


def ista_solve(op, b, cfg=None, x0=None, x_ref=None):
    """Proximal gradient descent for the L1-regularized problem."""
    cfg = SolverConfig() if cfg is None else cfg
    lam = cfg.reg_lambda

    def prox(v, mu):
        return soft_threshold(v, mu * lam)

    return _run_prox_gradient(
        op, b, cfg, x0, x_ref, prox, _l1_objective(op, b, lam), extrapolation=False
    )


def fista_solve(op, b, cfg=None, x0=None, x_ref=None, extrapolation=True):
    """Accelerated proximal gradient (momentum on the iterate sequence).

    extrapolation=False forces the momentum coefficient to zero, reducing the
    method to ista_solve exactly.
    """
    cfg = SolverConfig() if cfg is None else cfg
    lam = cfg.reg_lambda

    def prox(v, mu):
        return soft_threshold(v, mu * lam)

    return _run_prox_gradient(
        op, b, cfg, x0, x_ref, prox, _l1_objective(op, b, lam),
        extrapolation=extrapolation,
    )


def fista_tv_solve(op, b, cfg=None, x0=None, x_ref=None, tv_inner_iters=20):
    """FISTA with an isotropic TV proximal step."""
    if cfg is None:
        cfg = SolverConfig(max_iters=100, reg_lambda=0.001)
    lam = cfg.reg_lambda

    def prox(v, mu):
        return tv_prox(v, mu * lam, tv_inner_iters)

    def objective(x):
        r = op.apply(x) - b
        return 0.5 * float(np.sum(r * r)) + lam * tv_iso(x)

    return _run_prox_gradient(
        op, b, cfg, x0, x_ref, prox, objective, extrapolation=True
    )


def _cg_solve(matvec, rhs, tol, max_iters):
    """Conjugate gradient with a true-residual check at the stopping test."""
    rhs_norm = float(np.linalg.norm(rhs))
    x = np.zeros_like(rhs)
    if rhs_norm == 0.0:
        return x, 0.0
    r = rhs.copy()
    p = r.copy()
    rs = float(np.dot(r.ravel(), r.ravel()))
    rel = math.sqrt(rs) / rhs_norm
    for _ in range(max_iters):
        ap = matvec(p)
        denom = float(np.dot(p.ravel(), ap.ravel()))
        if denom <= 0.0:
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.dot(r.ravel(), r.ravel()))
        rel = math.sqrt(rs_new) / rhs_norm
        if rel <= tol:
            true_r = rhs - matvec(x)
            rel = float(np.linalg.norm(true_r)) / rhs_norm
            if rel <= tol:
                return x, rel
            # recursion residual drifted; restart from the true residual
            r = true_r
            p = r.copy()
            rs = float(np.dot(r.ravel(), r.ravel()))
            continue
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, rel


def laplacian_init(op, b, lambda0=0.001, tol=1e-8, max_iters=1000):
    """Quadratic warm start: solve (A^T A + lambda0 L^T L) x = A^T b by CG.

    L is the 5-point image Laplacian on the operator's input grid.  Raises
    ConvergenceError (reporting the final relative residual) if CG does not
    reach the tolerance within max_iters.
    """
    b = _check_measurement(op, b)
    rhs = op.adjoint(b)
    if lambda0 == 0.0:

        def matvec(x):
            return op.adjoint(op.apply(x))

    else:
        if len(op.in_shape) != 2:
            raise ShapeError(
                "laplacian regularization needs a 2-D image domain, got %r"
                % (op.in_shape,)
            )
        lap = LaplacianOperator(op.in_shape[0], op.in_shape[1])

        def matvec(x):
            return op.adjoint(op.apply(x)) + lambda0 * lap.adjoint(lap.apply(x))

    x, rel = _cg_solve(matvec, rhs, tol, max_iters)
    if rel > tol:
        raise ConvergenceError(
            "conjugate gradient stalled at relative residual %.3e (tol %.1e)"
            % (rel, tol)
        )
    return x
