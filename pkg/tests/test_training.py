"""Tests for the optimizer, metrics, and the seeded training loop."""

import math
import types

import numpy as np
import pytest

from fistanet import autodiff as ad
from fistanet import model as M
from fistanet import training as T
from fistanet.errors import ShapeError
from fistanet.operators import matrix_operator
from fistanet.phantoms import CirclePhantomSpec, build_dataset, circle_source
from fistanet.rng import Rng


def toy_problem(seed=0, size=16, m=24, n_train=12, n_val=4):
    rng = Rng(seed)
    A = rng.normal((m, size * size)) / size
    op = matrix_operator(A, in_shape=(size, size), out_shape=(m,))
    src = circle_source(CirclePhantomSpec(), size)
    data = Rng(1000 + seed)
    train = build_dataset(data.spawn(0), op, src, n_train, 40.0)
    val = build_dataset(data.spawn(1), op, src, n_val, 40.0)
    return op, train, val


def toy_model(op, seed=0, n_layers=2, nf=2):
    return M.FistaNetModel(op, op.matrix.copy(), n_layers, nf, "reparam", Rng(seed))


# ---------------------------------------------------------------------------
# config and optimizer


def test_training_config_validation():
    with pytest.raises(ValueError):
        T.TrainingConfig(batch_size=0)
    with pytest.raises(ValueError):
        T.TrainingConfig(lr1=0.0)
    with pytest.raises(ValueError):
        T.TrainingConfig(lr2=-1.0)
    with pytest.raises(ValueError):
        T.TrainingConfig(epochs=0)


def test_adam_zero_gradient_keeps_parameters():
    p = ad.Parameter("p", np.array([1.0, -2.0, 3.0]))
    state = T.AdamState([p], lr=0.1)
    T.adam_step(state, [p], grads=[np.zeros(3)])
    assert np.array_equal(p.value, [1.0, -2.0, 3.0])


def test_adam_first_step_matches_closed_form():
    # with bias correction the first update is -lr * g / (|g| + eps)
    p = ad.Parameter("p", np.array([0.0]))
    state = T.AdamState([p], lr=0.1)
    T.adam_step(state, [p], grads=[np.array([1.0])])
    assert abs(p.value[0] + 0.1) < 1e-8
    p2 = ad.Parameter("p2", np.array([0.0]))
    state2 = T.AdamState([p2], lr=0.1)
    T.adam_step(state2, [p2], grads=[np.array([-250.0])])
    assert abs(p2.value[0] - 0.1) < 1e-8  # magnitude-normalized step


def test_adam_groups_are_isolated():
    a = ad.Parameter("a", np.array([1.0]))
    b = ad.Parameter("b", np.array([1.0]))
    sa = T.AdamState([a], lr=0.5)
    T.adam_step(sa, [a], grads=[np.array([1.0])])
    assert a.value[0] != 1.0
    assert b.value[0] == 1.0
    assert sa.step_count == 1


def test_adam_requires_gradients_when_not_supplied():
    p = ad.Parameter("p", np.array([1.0]))
    p.clear_grad()
    state = T.AdamState([p], lr=0.1)
    with pytest.raises(Exception):
        T.adam_step(state, [p])


# ---------------------------------------------------------------------------
# metrics


def test_rmse_known_value_and_shape_check():
    assert T.rmse(np.zeros((2, 2)), np.full((2, 2), 3.0)) == 3.0
    with pytest.raises(ShapeError):
        T.rmse(np.zeros((2, 2)), np.zeros((2, 3)))


def test_psnr_constant_offset():
    x = np.zeros((8, 8))
    ref = np.full((8, 8), 0.1)
    assert abs(T.psnr(x, ref, 1.0) - 20.0) < 1e-12


def test_psnr_caps_at_sentinel():
    x = np.ones((4, 4))
    assert T.psnr(x, x, 1.0) == 99.0
    near = x + 1e-12
    assert T.psnr(near, x, 1.0) == 99.0


def test_psnr_rejects_bad_peak():
    with pytest.raises(ValueError):
        T.psnr(np.zeros((4, 4)), np.zeros((4, 4)), 0.0)


def test_ssim_perfect_match_is_one():
    img = Rng(1).uniform((16, 16))
    assert abs(T.ssim(img, img, 1.0) - 1.0) < 1e-12


def test_ssim_matches_definitional_oracle():
    # recompute per-window statistics with explicit loops
    rng = Rng(2)
    x = rng.uniform((32, 32))
    ref = np.clip(x + 0.1 * rng.normal((32, 32)), 0.0, 1.0)
    peak = 1.0
    win = T._gaussian_window()
    size = 11
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    vals = []
    for i in range(32 - size + 1):
        for j in range(32 - size + 1):
            px = x[i : i + size, j : j + size]
            pr = ref[i : i + size, j : j + size]
            mx = float(np.sum(win * px))
            my = float(np.sum(win * pr))
            sxx = float(np.sum(win * px * px)) - mx * mx
            syy = float(np.sum(win * pr * pr)) - my * my
            sxy = float(np.sum(win * px * pr)) - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sxx + syy + c2))
            )
    assert abs(T.ssim(x, ref, peak) - float(np.mean(vals))) < 1e-6


def test_ssim_rejects_images_below_window():
    with pytest.raises(ShapeError):
        T.ssim(np.zeros((8, 8)), np.zeros((8, 8)), 1.0)


def test_split_peak_range_and_degenerate():
    mk = lambda arr: types.SimpleNamespace(ground_truth=np.asarray(arr))
    samples = [mk([[0.1, 0.3]]), mk([[0.05, 0.45]])]
    assert abs(T.split_peak(samples) - 0.4) < 1e-15
    with pytest.raises(ValueError):
        T.split_peak([mk([[0.2, 0.2]])])


# ---------------------------------------------------------------------------
# schedule audit


def test_audit_clean_on_fresh_model():
    op, _, _ = toy_problem()
    model = toy_model(op)
    assert T.audit_schedule(model) == []


def test_audit_flags_broken_slope():
    op, _, _ = toy_problem()
    model = M.FistaNetModel(op, op.matrix.copy(), 3, 2, "free", Rng(0))
    model.schedule.v1.value = np.array([0.5])  # mu now increases with depth
    bad = T.audit_schedule(model)
    assert any("mu not decreasing" in msg for msg in bad)


# ---------------------------------------------------------------------------
# training loop


@pytest.fixture(scope="module")
def trained_toy(tmp_path_factory):
    op, train_samples, val_samples = toy_problem()
    model = toy_model(op)
    cfg = T.TrainingConfig(epochs=3, batch_size=4, seed=5)
    out = str(tmp_path_factory.mktemp("train_run"))
    res = T.train(model, train_samples, val_samples, cfg, out)
    return op, model, cfg, out, res, train_samples, val_samples


def test_train_writes_artifacts_and_log(trained_toy):
    import os

    op, model, cfg, out, res, train_samples, val_samples = trained_toy
    assert os.path.exists(res.best_path)
    assert os.path.exists(res.final_path)
    assert os.path.exists(res.best_path + ".meta")
    assert os.path.exists(os.path.join(out, "log.csv"))
    with open(os.path.join(out, "log.csv")) as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_rmse,val_psnr,val_ssim"
    assert len(lines) == 1 + cfg.epochs
    assert len(res.log_rows) == cfg.epochs


def test_train_loss_improves_on_toy(trained_toy):
    _, _, _, _, res, _, _ = trained_toy
    losses = [row[1] for row in res.log_rows]
    assert losses[-1] < losses[0]


def test_train_keeps_schedule_feasible(trained_toy):
    _, model, _, _, res, _, _ = trained_toy
    assert res.schedule_violations == []
    assert T.audit_schedule(model) == []


def test_best_checkpoint_reproduces_logged_metric(trained_toy):
    op, _, cfg, out, res, train_samples, val_samples = trained_toy
    tensors, meta = M.load_checkpoint(res.best_path)
    best = M.model_from_checkpoint(op, op.matrix.copy(), tensors, meta)
    peak = T.split_peak(val_samples)
    x0s = T.warm_starts(op, val_samples)
    m = T.eval_metrics(best, val_samples, x0s, peak, cfg.batch_size)
    assert abs(m.psnr - res.best_val_psnr) < 1e-10
    assert res.best_epoch >= 1


def test_training_is_bytewise_deterministic(tmp_path):
    op, train_samples, val_samples = toy_problem(seed=3)
    outs = []
    for run in range(2):
        model = toy_model(op, seed=9)
        cfg = T.TrainingConfig(epochs=2, batch_size=4, seed=11)
        out = str(tmp_path / ("run%d" % run))
        T.train(model, train_samples, val_samples, cfg, out)
        outs.append(out)
    for name in ("final.ckpt", "log.csv"):
        with open("%s/%s" % (outs[0], name), "rb") as fh:
            first = fh.read()
        with open("%s/%s" % (outs[1], name), "rb") as fh:
            second = fh.read()
        assert first == second, name


def test_train_rejects_empty_split(tmp_path):
    op, train_samples, val_samples = toy_problem()
    model = toy_model(op)
    with pytest.raises(ValueError):
        T.train(model, [], val_samples, T.TrainingConfig(epochs=1), str(tmp_path))


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_noise_sweep_orders_and_reproduces():
    op, _, val_samples = toy_problem(seed=7, n_train=2, n_val=6)
    model = toy_model(op, seed=7)
    for p in model.prox.parameters():
        p.value = np.zeros_like(p.value)
    base, sweep = T.evaluate(model, val_samples, noise_sweep=(40.0, 6.0), seed=3)
    assert len(sweep) == 2
    assert sweep[0][0] == 40.0 and sweep[1][0] == 6.0
    # heavier measurement noise must hurt the reconstruction
    assert sweep[0][1].psnr > sweep[1][1].psnr
    base2, sweep2 = T.evaluate(model, val_samples, noise_sweep=(40.0, 6.0), seed=3)
    assert base.psnr == base2.psnr
    for (s1, m1), (s2, m2) in zip(sweep, sweep2):
        assert s1 == s2 and m1 == m2
    _, sweep3 = T.evaluate(model, val_samples, noise_sweep=(40.0, 6.0), seed=4)
    assert sweep3[0][1].psnr != sweep[0][1].psnr


def test_evaluate_without_sweep_returns_base_only():
    op, _, val_samples = toy_problem(seed=8, n_train=2, n_val=3)
    model = toy_model(op, seed=8)
    base, sweep = T.evaluate(model, val_samples)
    assert sweep == []
    assert math.isfinite(base.psnr) and math.isfinite(base.ssim)


def test_run_dir_name_tracks_config_and_extra():
    a = T.TrainingConfig(epochs=2, seed=4)
    b = T.TrainingConfig(epochs=3, seed=4)
    assert T.run_dir_name(a) != T.run_dir_name(b)
    assert T.run_dir_name(a) == T.run_dir_name(T.TrainingConfig(epochs=2, seed=4))
    assert T.run_dir_name(a, extra="x") != T.run_dir_name(a)
    assert T.run_dir_name(a).endswith("_seed4")
