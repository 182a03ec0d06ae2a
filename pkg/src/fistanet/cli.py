"""Command-line front end.

Subcommands: gen-data, weights, solve, train, eval.  Configuration comes
from key=value files ("#" comments allowed) merged with command-line
overrides; unknown keys are rejected.  Every command is deterministic
given its config and seed, and all errors exit nonzero after printing a
single "error: ..." line.

Environment variables: none.
"""

import argparse
import os
import sys

import numpy as np

from . import model as mdl
from . import solvers as slv
from . import training as trn
from .errors import ConfigError, FistanetError
from .operators import (
    RadonGeometry,
    RadonOperator,
    fbp_reconstruct,
    operator_to_dense,
    synth_emt_operator,
)
from .phantoms import (
    CirclePhantomSpec,
    build_dataset,
    circle_source,
    ellipse_source,
    load_dataset,
    save_dataset,
)
from .rng import Rng
from .tensor import read_tensor, write_tensor
from .weights import check_lista_condition, coherence_report, solve_analytic_W

# (type, default) per config key; this list is exhaustive
CONFIG_SCHEMA = {
    "problem": (str, "emt-synth"),
    "image_size": (int, 32),
    "n_views": (int, 15),
    "n_detectors": (int, 0),  # 0 = smallest row covering the diagonal
    "n_meas": (int, 64),
    "snr_db": (float, 40.0),
    "n_train": (int, 500),
    "n_val": (int, 100),
    "n_test": (int, 100),
    "layers": (int, 7),
    "nf": (int, 32),
    "lr1": (float, 1e-3),
    "lr2": (float, 1e-2),
    "lambda1": (float, 0.01),
    "lambda2": (float, 0.001),
    "epochs": (int, 30),
    "batch": (int, 16),
    "seed": (int, 0),
    "mode": (str, "analytic"),
    "sign_mode": (str, "reparam"),
    "out_dir": (str, "out"),
}

PROBLEMS = ("emt-synth", "ct-radon")
MODES = ("analytic", "physical")
SOLVERS = ("fbp", "laplacian", "ista", "fista", "fista-tv", "fistanet")

# fixed synthetic-operator conditioning target for the emt preset
EMT_TARGET_CONDITION = 100.0
# ellipse count for ct phantoms (desk default)
CT_N_ELLIPSES = 4
# iteration budgets for the classical solve paths
CLI_L1_ITERS = 200
CLI_L1_LAMBDA = 1e-3
CLI_TV_LAMBDA = 1e-3


def _convert(key, raw):
    typ, _ = CONFIG_SCHEMA[key]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)  # accepts "inf"
        return str(raw)
    except ValueError:
        raise ConfigError("config key %s: cannot parse %r" % (key, raw))


def parse_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError("%s:%d: expected key=value, got %r" % (path, lineno, text))
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError("%s:%d: unknown config key %r" % (path, lineno, key))
        values[key] = _convert(key, raw)
    return values


def merge_config(args):
    cfg = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    if args.config:
        cfg.update(parse_config_file(args.config))
    for key in CONFIG_SCHEMA:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _convert(key, val)
    if cfg["problem"] not in PROBLEMS:
        raise ConfigError("problem must be one of %s" % (PROBLEMS,))
    if cfg["mode"] not in MODES:
        raise ConfigError("mode must be one of %s" % (MODES,))
    if cfg["sign_mode"] not in mdl.SIGN_MODES:
        raise ConfigError("sign_mode must be one of %s" % (mdl.SIGN_MODES,))
    return cfg


GEOMETRY_KEYS = ("problem", "image_size", "n_views", "n_detectors", "n_meas",
                 "snr_db", "seed", "n_train", "n_val", "n_test")


def build_operator(cfg):
    if cfg["problem"] == "emt-synth":
        op_rng = Rng(cfg["seed"]).spawn(101)
        return synth_emt_operator(
            op_rng, cfg["n_meas"], cfg["image_size"], EMT_TARGET_CONDITION
        )
    n_det = cfg["n_detectors"] if cfg["n_detectors"] > 0 else None
    geom = RadonGeometry(cfg["image_size"], cfg["n_views"], n_det)
    return RadonOperator(geom)


def phantom_source_for(cfg):
    if cfg["problem"] == "emt-synth":
        return circle_source(CirclePhantomSpec(), cfg["image_size"])
    return ellipse_source(CT_N_ELLIPSES, cfg["image_size"])


def data_dir(cfg):
    return os.path.join(cfg["out_dir"], "data")


def write_pgm(path, img):
    """8-bit binary graymap, min-max scaled (monotone, layout-preserving)."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = np.round((img - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(img)
    data = scaled.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        fh.write(data)


def cmd_gen_data(cfg):
    op = build_operator(cfg)
    source = phantom_source_for(cfg)
    base = data_dir(cfg)
    master = Rng(cfg["seed"])
    counts = {"train": cfg["n_train"], "val": cfg["n_val"], "test": cfg["n_test"]}
    for i, (split, n) in enumerate(counts.items()):
        samples = build_dataset(master.spawn(i), op, source, n, cfg["snr_db"])
        save_dataset(os.path.join(base, split), samples)
    os.makedirs(base, exist_ok=True)
    with open(os.path.join(base, "dataset.txt"), "w") as fh:
        for key in GEOMETRY_KEYS:
            fh.write("%s=%r\n" % (key, cfg[key]))
    if cfg["problem"] == "emt-synth":
        write_tensor(os.path.join(base, "operator_A.ftns"), op.matrix)
    print("wrote dataset under %s" % base)
    print(
        "problem=%s image_size=%d measurements=%d snr_db=%r"
        % (cfg["problem"], cfg["image_size"], op.out_size, cfg["snr_db"])
    )
    print(
        "splits: train=%d val=%d test=%d"
        % (cfg["n_train"], cfg["n_val"], cfg["n_test"])
    )
    return 0


def load_dataset_config(cfg):
    """Geometry recorded at gen-data time; authoritative for the operator.

    The returned dict keeps the current config's training seed and
    hyperparameters.  Only the stored geometry keys (problem, sizes, data
    seed, noise level) replace the merged values, so training with a fresh
    --seed against an existing dataset works as expected.
    """
    path = os.path.join(data_dir(cfg), "dataset.txt")
    if not os.path.isfile(path):
        raise ConfigError("no dataset at %s (run gen-data first)" % data_dir(cfg))
    stored = dict(cfg)
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, raw = line.split("=", 1)
            raw = raw.strip("'\"")
            if key not in GEOMETRY_KEYS:
                raise ConfigError("dataset.txt: unexpected key %r" % key)
            stored[key] = _convert(key, raw)
    stored["seed"] = cfg["seed"]  # training seed stays the caller's choice
    stored["data_seed"] = _read_stored_seed(path)
    return stored


def _read_stored_seed(path):
    with open(path) as fh:
        for line in fh:
            if line.startswith("seed="):
                return int(line.strip().split("=", 1)[1])
    raise ConfigError("dataset.txt: missing seed entry")


def operator_from_dataset(cfg):
    """Rebuild the forward operator exactly as gen-data built it."""
    op_cfg = dict(cfg)
    op_cfg["seed"] = cfg.get("data_seed", cfg["seed"])
    op = build_operator(op_cfg)
    a_path = os.path.join(data_dir(cfg), "operator_A.ftns")
    if cfg["problem"] == "emt-synth" and os.path.isfile(a_path):
        A = read_tensor(a_path)
        size = cfg["image_size"]
        if A.shape != (cfg["n_meas"], size * size) or not np.array_equal(
            A, op.matrix
        ):
            raise ConfigError(
                "mismatched geometry: stored operator %r does not match config"
                % (A.shape,)
            )
    return op


def dense_matrix(op):
    if hasattr(op, "matrix"):
        return op.matrix
    return operator_to_dense(op)


def weights_for_mode(cfg, op):
    if cfg["mode"] == "physical":
        return None
    return solve_analytic_W(dense_matrix(op)).W


def cmd_weights(cfg):
    if os.path.isfile(os.path.join(data_dir(cfg), "dataset.txt")):
        cfg = load_dataset_config(cfg)
        op = operator_from_dataset(cfg)
    else:
        op = build_operator(cfg)
    A = dense_matrix(op)
    out = os.path.join(cfg["out_dir"], "weights")
    os.makedirs(out, exist_ok=True)
    w_path = os.path.join(out, "W.ftns")
    report_path = os.path.join(out, "report.txt")
    if cfg["mode"] == "physical":
        write_tensor(w_path, A)
        with open(report_path, "w") as fh:
            fh.write("mode=physical\n")
            fh.write("note=W equals the forward matrix A\n")
        print("wrote physical W (= A) to %s" % w_path)
        return 0
    rep = solve_analytic_W(A)
    write_tensor(w_path, rep.W)
    lista = check_lista_condition(
        rep.W.T, np.eye(A.shape[1]) - rep.W.T @ A, A
    )
    coh_w = coherence_report(rep.W, A)
    coh_a = coherence_report(A, A)
    with open(report_path, "w") as fh:
        fh.write("mode=analytic\n")
        fh.write("ridge_eps=%.17g\n" % rep.ridge_eps)
        fh.write("objective=%.17g\n" % rep.objective)
        fh.write("max_constraint_residual=%.3e\n" % rep.constraint_residuals.max())
        fh.write("kkt_residual=%.3e\n" % rep.kkt_residual)
        fh.write("lista_residual=%.3e\n" % lista)
        fh.write("coherence_W=%.6f\n" % coh_w)
        fh.write("coherence_A=%.6f\n" % coh_a)
    print("wrote analytic W to %s" % w_path)
    print(
        "max constraint residual %.3e, kkt %.3e, lista %.3e"
        % (rep.constraint_residuals.max(), rep.kkt_residual, lista)
    )
    return 0


def _solver_reconstruct(cfg, op, solver, sample, checkpoint_model):
    """One reconstruction; returns (image, trace rows, layer images)."""
    b = sample.measurement
    gt = sample.ground_truth
    if solver == "fbp":
        if cfg["problem"] != "ct-radon":
            raise ConfigError("fbp requires the ct-radon problem")
        return fbp_reconstruct(op.geometry, b), [], []
    if solver == "laplacian":
        return slv.laplacian_init(op, b, 0.001), [], []
    if solver in ("ista", "fista"):
        scfg = slv.SolverConfig(
            max_iters=CLI_L1_ITERS, reg_lambda=CLI_L1_LAMBDA, tol=0.0
        )
        fn = slv.ista_solve if solver == "ista" else slv.fista_solve
        x, trace = fn(op, b, scfg, x_ref=gt)
        rows = list(zip(trace.objective, trace.rmse))
        return x, rows, []
    if solver == "fista-tv":
        scfg = slv.SolverConfig(max_iters=100, reg_lambda=CLI_TV_LAMBDA, tol=0.0)
        x, trace = slv.fista_tv_solve(op, b, scfg, x_ref=gt)
        rows = list(zip(trace.objective, trace.rmse))
        return x, rows, []
    # fistanet: trace records the data-fidelity term per unrolled layer
    model = checkpoint_model
    x0 = slv.laplacian_init(op, b, 0.001)
    res = mdl.forward(model, b[None], x0[None])
    layers = [layer[0] for layer in res.intermediates]
    rows = [
        (0.5 * float(np.sum((op.apply(layer) - b) ** 2)), trn.rmse(layer, gt))
        for layer in layers
    ]
    return layers[-1], rows, layers


def cmd_solve(cfg, solver, checkpoint, split, limit):
    if solver not in SOLVERS:
        raise ConfigError("solver must be one of %s" % (SOLVERS,))
    cfg = load_dataset_config(cfg)
    op = operator_from_dataset(cfg)
    samples = load_dataset(os.path.join(data_dir(cfg), split))
    if limit:
        samples = samples[:limit]
    checkpoint_model = None
    if solver == "fistanet":
        if not checkpoint:
            raise ConfigError("solver fistanet needs --checkpoint")
        tensors, meta = mdl.load_checkpoint(checkpoint)
        W = None if meta["mode"] == "physical" else solve_analytic_W(dense_matrix(op)).W
        checkpoint_model = mdl.model_from_checkpoint(op, W, tensors, meta)
    out = os.path.join(cfg["out_dir"], "solve_%s" % solver, split)
    os.makedirs(out, exist_ok=True)
    for i, sample in enumerate(samples):
        x, rows, layers = _solver_reconstruct(cfg, op, solver, sample, checkpoint_model)
        stem = os.path.join(out, "sample_%05d" % i)
        write_tensor(stem + "_recon.ftns", x)
        write_pgm(stem + "_recon.pgm", x)
        if rows:
            with open(stem + "_trace.csv", "w") as fh:
                fh.write("iteration,objective,rmse\n")
                for j, (obj, err) in enumerate(rows):
                    fh.write("%d,%.17g,%.17g\n" % (j + 1, obj, err))
        for k, layer in enumerate(layers):
            write_tensor("%s_layer_%d.ftns" % (stem, k + 1), layer)
            write_pgm("%s_layer_%d.pgm" % (stem, k + 1), layer)
    print("solver=%s split=%s samples=%d -> %s" % (solver, split, len(samples), out))
    return 0


def training_config_from(cfg):
    return trn.TrainingConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch"],
        lr1=cfg["lr1"],
        lr2=cfg["lr2"],
        lambda1=cfg["lambda1"],
        lambda2=cfg["lambda2"],
        seed=cfg["seed"],
    )


def cmd_train(cfg):
    cfg = load_dataset_config(cfg)
    op = operator_from_dataset(cfg)
    train_s = load_dataset(os.path.join(data_dir(cfg), "train"))
    val_s = load_dataset(os.path.join(data_dir(cfg), "val"))
    W = weights_for_mode(cfg, op)
    model = mdl.FistaNetModel(
        op, W, cfg["layers"], cfg["nf"], cfg["sign_mode"], Rng(cfg["seed"])
    )
    tcfg = training_config_from(cfg)
    extra = "|".join(
        "%s=%r" % (k, cfg["data_seed"] if k == "seed" else cfg[k])
        for k in GEOMETRY_KEYS
    )
    extra += "|layers=%d|nf=%d|mode=%s|sign=%s" % (
        cfg["layers"], cfg["nf"], cfg["mode"], cfg["sign_mode"],
    )
    run_dir = os.path.join(cfg["out_dir"], "train", trn.run_dir_name(tcfg, extra))
    result = trn.train(model, train_s, val_s, tcfg, run_dir)
    print("run dir: %s" % run_dir)
    print(
        "best epoch %d val psnr %.3f dB; schedule violations: %d"
        % (result.best_epoch, result.best_val_psnr, len(result.schedule_violations))
    )
    print("checkpoints: %s, %s" % (result.best_path, result.final_path))
    return 0


def cmd_eval(cfg, checkpoint, methods, sweep):
    cfg = load_dataset_config(cfg)
    op = operator_from_dataset(cfg)
    test_s = load_dataset(os.path.join(data_dir(cfg), "test"))
    peak = trn.split_peak(test_s)
    out = os.path.join(cfg["out_dir"], "eval")
    os.makedirs(out, exist_ok=True)
    x0s = trn.warm_starts(op, test_s)
    rows = []
    net_model = None
    for method in methods:
        if method not in SOLVERS:
            raise ConfigError("unknown method %r" % method)
        n_params = 0
        if method == "fistanet":
            if not checkpoint:
                raise ConfigError("method fistanet needs --checkpoint")
            tensors, meta = mdl.load_checkpoint(checkpoint)
            W = None if meta["mode"] == "physical" else solve_analytic_W(
                dense_matrix(op)
            ).W
            net_model = mdl.model_from_checkpoint(op, W, tensors, meta)
            n_params = mdl.count_parameters(net_model)
            metrics = trn.eval_metrics(net_model, test_s, x0s, peak, cfg["batch"])
        else:
            recon = [
                _solver_reconstruct(cfg, op, method, s, None)[0] for s in test_s
            ]
            metrics = trn.MetricsRow(
                rmse=float(np.mean([trn.rmse(r, s.ground_truth)
                                    for r, s in zip(recon, test_s)])),
                psnr=float(np.mean([trn.psnr(r, s.ground_truth, peak)
                                    for r, s in zip(recon, test_s)])),
                ssim=float(np.mean([trn.ssim(r, s.ground_truth, peak)
                                    for r, s in zip(recon, test_s)])),
            )
        rows.append((method, metrics, n_params))
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write("method,psnr,ssim,rmse,n_params\n")
        for method, m, n_params in rows:
            fh.write("%s,%.6f,%.6f,%.8f,%d\n" % (method, m.psnr, m.ssim, m.rmse, n_params))
    for method, m, n_params in rows:
        print("%-10s psnr %7.3f  ssim %.4f  rmse %.6f  params %d"
              % (method, m.psnr, m.ssim, m.rmse, n_params))
    if sweep:
        if net_model is None:
            raise ConfigError("--sweep needs the fistanet method and --checkpoint")
        _, sweep_rows = trn.evaluate(
            net_model, test_s, peak=peak,
            noise_sweep=trn.NOISE_SWEEP_GRID, seed=cfg["seed"], batch_size=cfg["batch"],
        )
        with open(os.path.join(out, "sweep.csv"), "w") as fh:
            fh.write("snr_db,psnr,ssim,rmse\n")
            for snr, m in sweep_rows:
                fh.write("%g,%.6f,%.6f,%.8f\n" % (snr, m.psnr, m.ssim, m.rmse))
        print("sweep written to %s" % os.path.join(out, "sweep.csv"))
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value config file")
    for key in CONFIG_SCHEMA:
        parser.add_argument("--%s" % key, dest=key, help=argparse.SUPPRESS)


def build_parser():
    parser = _Parser(prog="fistanet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add_config_flags(p)

    p = sub.add_parser("weights", help="compute and store the gradient matrix")
    _add_config_flags(p)

    p = sub.add_parser("solve", help="reconstruct a dataset split")
    _add_config_flags(p)
    p.add_argument("--solver", required=True, choices=SOLVERS)
    p.add_argument("--checkpoint", help="trained model file (solver fistanet)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--n-samples", type=int, default=0, help="limit sample count")

    p = sub.add_parser("train", help="train the unrolled network")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="metrics table and optional noise sweep")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="trained model file")
    p.add_argument(
        "--methods",
        default="laplacian,fista-tv,fistanet",
        help="comma-separated list from: %s" % ",".join(SOLVERS),
    )
    p.add_argument("--sweep", action="store_true", help="also run the SNR sweep")

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = merge_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "weights":
            return cmd_weights(cfg)
        if args.command == "solve":
            return cmd_solve(
                cfg, args.solver, args.checkpoint, args.split, args.n_samples
            )
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            return cmd_eval(cfg, args.checkpoint, methods, args.sweep)
        raise ConfigError("unknown command %r" % args.command)
    except FistanetError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
