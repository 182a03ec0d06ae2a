"""End-to-end training, metrics, and evaluation loops.

Adam runs with two parameter groups (conv kernels vs the six schedule
scalars) at separate learning rates.  Everything is seeded: batch order,
noise draws, and initialization all derive from the config seed, so a rerun
reproduces checkpoints byte for byte.
"""

import dataclasses
import hashlib
import math
import os

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .errors import ShapeError, TrainingError
from .phantoms import add_noise_snr
from .rng import Rng
from .solvers import laplacian_init


@dataclasses.dataclass
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 16
    lr1: float = 1e-3  # conv kernels
    lr2: float = 1e-2  # schedule scalars
    lambda1: float = 0.01
    lambda2: float = 0.001
    seed: int = 0
    checkpoint_every: int = 0  # 0 = only best + final
    eval_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr1 <= 0 or self.lr2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclasses.dataclass
class MetricsRow:
    rmse: float
    psnr: float
    ssim: float


class AdamState:
    """Moments and step count for one parameter group."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}


def adam_step(state, params, grads=None):
    """One bias-corrected Adam update over a group, in place."""
    if grads is None:
        grads = []
        for p in params:
            if p.node.grad is None:
                raise TrainingError("parameter %s has no gradient" % p.name)
            grads.append(p.node.grad)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g in zip(params, grads):
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.value = p.value - state.lr * mhat / (np.sqrt(vhat) + state.eps)


def rmse(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError("rmse shapes differ: %r vs %r" % (x.shape, ref.shape))
    d = x - ref
    return math.sqrt(float(np.mean(d * d)))


PSNR_CAP = 99.0


def psnr(x, ref, peak):
    """20 log10(peak / rmse), capped at the 99 dB sentinel."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = rmse(x, ref)
    if err == 0.0:
        return PSNR_CAP
    return min(20.0 * math.log10(peak / err), PSNR_CAP)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(x, ref, peak):
    """Mean local SSIM, 11x11 Gaussian window sigma=1.5, valid windows only."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeError("ssim shapes differ: %r vs %r" % (x.shape, ref.shape))
    win = _gaussian_window()
    size = win.shape[0]
    if x.shape[0] < size or x.shape[1] < size:
        raise ShapeError("image smaller than the %dx%d ssim window" % (size, size))
    sw = np.lib.stride_tricks.sliding_window_view

    def wmean(img):
        return np.tensordot(sw(img, (size, size)), win, axes=([2, 3], [0, 1]))

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mx = wmean(x)
    my = wmean(ref)
    sxx = wmean(x * x) - mx * mx
    syy = wmean(ref * ref) - my * my
    sxy = wmean(x * ref) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def split_peak(samples):
    """PSNR/SSIM dynamic range: max - min of ground truth over a split."""
    lo = min(float(s.ground_truth.min()) for s in samples)
    hi = max(float(s.ground_truth.max()) for s in samples)
    if hi <= lo:
        raise ValueError("degenerate split: zero dynamic range")
    return hi - lo


def warm_starts(op, samples, lambda0=0.001):
    """Laplacian-regularized initialization per sample (x^(0) inputs)."""
    return [laplacian_init(op, s.measurement, lambda0) for s in samples]


def reconstruct(model, measurements, x0s, batch_size=16):
    """Batched forward pass; returns [n, H, W] reconstructions."""
    n = len(measurements)
    out = []
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        b = np.stack(measurements[lo:hi])
        x0 = np.stack(x0s[lo:hi])
        res = mdl.forward(model, b, x0)
        out.append(res.x_final.value[:, 0])
    return np.concatenate(out, axis=0)


def eval_metrics(model, samples, x0s, peak, batch_size=16):
    recon = reconstruct(model, [s.measurement for s in samples], x0s, batch_size)
    rows = [
        MetricsRow(
            rmse=rmse(recon[i], samples[i].ground_truth),
            psnr=psnr(recon[i], samples[i].ground_truth, peak),
            ssim=ssim(recon[i], samples[i].ground_truth, peak),
        )
        for i in range(len(samples))
    ]
    return MetricsRow(
        rmse=float(np.mean([r.rmse for r in rows])),
        psnr=float(np.mean([r.psnr for r in rows])),
        ssim=float(np.mean([r.ssim for r in rows])),
    )


def audit_schedule(model):
    """Check the schedule constraints; returns a list of violation strings."""
    mus, thetas, rhos = [], [], []
    for k in range(1, model.n_layers + 1):
        mu, theta, rho = mdl.schedule_eval(model.schedule, k, model.n_layers)
        mus.append(float(mu.value[0]))
        thetas.append(float(theta.value[0]))
        rhos.append(float(rho.value[0]))
    bad = []
    for k in range(model.n_layers):
        if not mus[k] > 0:
            bad.append("mu[%d]=%g not positive" % (k + 1, mus[k]))
        if not thetas[k] > 0:
            bad.append("theta[%d]=%g not positive" % (k + 1, thetas[k]))
        if not 0.0 <= rhos[k] < 1.0:
            bad.append("rho[%d]=%g outside [0,1)" % (k + 1, rhos[k]))
    if rhos and rhos[0] != 0.0:
        bad.append("rho[1]=%g nonzero" % rhos[0])
    for k in range(model.n_layers - 1):
        if not mus[k + 1] < mus[k]:
            bad.append("mu not decreasing at %d" % (k + 2))
        if not thetas[k + 1] < thetas[k]:
            bad.append("theta not decreasing at %d" % (k + 2))
        if not rhos[k + 1] > rhos[k]:
            bad.append("rho not increasing at %d" % (k + 2))
    return bad


@dataclasses.dataclass
class TrainResult:
    log_rows: list  # (epoch, train_loss, val_rmse, val_psnr, val_ssim)
    best_epoch: int
    best_val_psnr: float
    schedule_violations: list
    best_path: str
    final_path: str


def config_hash(cfg, extra=""):
    text = repr(sorted(dataclasses.asdict(cfg).items())) + extra
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:10]


def run_dir_name(cfg, extra=""):
    return "run_%s_seed%d" % (config_hash(cfg, extra), cfg.seed)


def train(model, train_samples, val_samples, cfg, out_dir):
    """Full training loop; writes log.csv, best.ckpt, final.ckpt to out_dir.

    Schedule constraints are audited after every optimizer step (reparam
    mode should never violate them); the audit record is returned so tests
    can assert zero violations.
    """
    if not train_samples:
        raise ValueError("empty training set")
    os.makedirs(out_dir, exist_ok=True)
    op = model.op
    n = len(train_samples)
    shuffle_rng = Rng(cfg.seed)

    train_x0 = warm_starts(op, train_samples)
    val_x0 = warm_starts(op, val_samples) if val_samples else []
    peak = split_peak(val_samples if val_samples else train_samples)

    adam_conv = AdamState(model.conv_parameters(), cfg.lr1)
    adam_sched = AdamState(model.schedule_parameters(), cfg.lr2)
    inv_b = 1.0

    log_rows = []
    violations = []
    best_psnr = -math.inf
    best_epoch = -1
    best_path = os.path.join(out_dir, "best.ckpt")
    final_path = os.path.join(out_dir, "final.ckpt")

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle_rng.spawn(epoch).permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            batch = [train_samples[i] for i in idx]
            b = np.stack([s.measurement for s in batch])
            gt = np.stack([s.ground_truth for s in batch])
            x0 = np.stack([train_x0[i] for i in idx])

            res = mdl.forward(model, b, x0)
            inv_b = 1.0 / len(batch)
            loss = ad.scale(
                mdl.total_loss(model, res, gt, cfg.lambda1, cfg.lambda2),
                ad.constant(np.array([inv_b])),
            )
            loss_val = float(loss.value[0])
            if not math.isfinite(loss_val):
                raise TrainingError(
                    "non-finite loss %r at epoch %d step %d" % (loss_val, epoch, step)
                )
            model.clear_grads()
            ad.backward(loss)
            adam_step(adam_conv, model.conv_parameters())
            adam_step(adam_sched, model.schedule_parameters())
            model.schedule.project_signs()
            step += 1
            bad = audit_schedule(model)
            if bad:
                violations.append((epoch, step, bad))
            epoch_loss += loss_val
            n_batches += 1

        train_loss = epoch_loss / n_batches
        if val_samples and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            m = eval_metrics(model, val_samples, val_x0, peak, cfg.batch_size)
            val_row = (m.rmse, m.psnr, m.ssim)
            if m.psnr > best_psnr:
                best_psnr = m.psnr
                best_epoch = epoch
                mdl.save_checkpoint(model, best_path)
        else:
            val_row = (float("nan"),) * 3
        log_rows.append((epoch, train_loss) + val_row)
        if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            mdl.save_checkpoint(model, os.path.join(out_dir, "epoch_%04d.ckpt" % epoch))

    mdl.save_checkpoint(model, final_path)
    if not val_samples:
        mdl.save_checkpoint(model, best_path)

    with open(os.path.join(out_dir, "log.csv"), "w") as fh:
        fh.write("epoch,train_loss,val_rmse,val_psnr,val_ssim\n")
        for row in log_rows:
            fh.write("%d,%.17g,%.17g,%.17g,%.17g\n" % row)

    return TrainResult(
        log_rows=log_rows,
        best_epoch=best_epoch,
        best_val_psnr=best_psnr,
        schedule_violations=violations,
        best_path=best_path,
        final_path=final_path,
    )


NOISE_SWEEP_GRID = (22, 25, 28, 31, 34, 37, 40)


def evaluate(model, samples, peak=None, noise_sweep=None, seed=0, batch_size=16):
    """Metrics on a split, optionally swept over re-noised measurements.

    The sweep regenerates noise on the clean forward projection of each
    ground truth at every SNR in the grid, seeded for reproducibility.
    Returns (MetricsRow, sweep list of (snr_db, MetricsRow)).
    """
    op = model.op
    if peak is None:
        peak = split_peak(samples)
    x0s = warm_starts(op, samples)
    base = eval_metrics(model, samples, x0s, peak, batch_size)
    sweep = []
    if noise_sweep:
        rng = Rng(seed)
        clean = [op.apply(s.ground_truth) for s in samples]
        for j, snr in enumerate(noise_sweep):
            child = rng.spawn(j)
            noisy = [
                add_noise_snr(child.spawn(i), clean[i], snr)
                for i in range(len(samples))
            ]
            x0n = [laplacian_init(op, bi, 0.001) for bi in noisy]
            recon = reconstruct(model, noisy, x0n, batch_size)
            rows = [
                MetricsRow(
                    rmse=rmse(recon[i], samples[i].ground_truth),
                    psnr=psnr(recon[i], samples[i].ground_truth, peak),
                    ssim=ssim(recon[i], samples[i].ground_truth, peak),
                )
                for i in range(len(samples))
            ]
            sweep.append(
                (
                    float(snr),
                    MetricsRow(
                        rmse=float(np.mean([r.rmse for r in rows])),
                        psnr=float(np.mean([r.psnr for r in rows])),
                        ssim=float(np.mean([r.ssim for r in rows])),
                    ),
                )
            )
    return base, sweep


def layer_study(op, W, train_samples, val_samples, cfg, nf, sign_mode, out_dir,
                layer_counts=(5, 6, 7, 8, 9)):
    """Train one model per layer count; returns (count, MetricsRow) rows."""
    rows = []
    peak = split_peak(val_samples)
    val_x0 = warm_starts(op, val_samples)
    for ns in layer_counts:
        model = mdl.FistaNetModel(op, W, ns, nf, sign_mode, Rng(cfg.seed))
        sub = os.path.join(out_dir, "layers_%d" % ns)
        train(model, train_samples, val_samples, cfg, sub)
        tensors, meta = mdl.load_checkpoint(os.path.join(sub, "best.ckpt"))
        best = mdl.model_from_checkpoint(op, W, tensors, meta)
        rows.append((ns, eval_metrics(best, val_samples, val_x0, peak)))
    return rows
