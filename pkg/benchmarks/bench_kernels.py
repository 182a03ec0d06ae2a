"""Timing comparison of the compiled kernels against the pure-python fallback.

Run as a script:

    python3 benchmarks/bench_kernels.py [--repeats N] [--size S]

Times the 3x3 convolution forward/backward passes and the projection
kernels under both backends and prints a table with speedup factors.
The two backends are also cross-checked on every workload so a timing
run doubles as a parity check.
"""

import argparse
import sys
import time

import numpy as np

from fistanet import _kernels
from fistanet.operators import RadonGeometry
from fistanet.rng import Rng


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(size):
    rng = Rng(0)
    nf = 32
    x = rng.normal((8, 1, size, size))
    k1 = rng.normal((nf, 1, 3, 3)) * 0.1
    feat = rng.normal((8, nf, size, size))
    k2 = rng.normal((nf, nf, 3, 3)) * 0.05
    gout = rng.normal((8, nf, size, size))
    geom = RadonGeometry(size, 30)
    img = rng.normal((size * size,))
    sino = rng.normal((30, geom.n_detectors))

    return [
        ("conv3x3 fwd 1->32", lambda b: b.conv3x3_fwd(x, k1)),
        ("conv3x3 fwd 32->32", lambda b: b.conv3x3_fwd(feat, k2)),
        ("conv3x3 grad_input", lambda b: b.conv3x3_grad_input(gout, k2)),
        ("conv3x3 grad_kernel", lambda b: b.conv3x3_grad_kernel(feat, gout)),
        (
            "radon fwd %d views" % geom.n_views,
            lambda b: b.radon_fwd(img, geom._bin0, geom._frac, geom.n_detectors),
        ),
        (
            "radon adj %d views" % geom.n_views,
            lambda b: b.radon_adj(sino, geom._bin0, geom._frac, size * size),
        ),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--size", type=int, default=32)
    args = parser.parse_args(argv)

    if not _kernels.compiled_available():
        print("compiled backend not built; nothing to compare", file=sys.stderr)
        return 1

    py = _kernels.get_backend("python")
    cc = _kernels.get_backend("compiled")

    print("image size %dx%d, batch 8, best of %d repeats" % (
        args.size, args.size, args.repeats))
    print("%-22s %12s %12s %9s" % ("workload", "python", "compiled", "speedup"))
    worst_dev = 0.0
    for name, call in workloads(args.size):
        t_py, out_py = time_call(lambda: call(py), args.repeats)
        t_cc, out_cc = time_call(lambda: call(cc), args.repeats)
        dev = float(np.max(np.abs(np.asarray(out_py) - np.asarray(out_cc))))
        worst_dev = max(worst_dev, dev)
        print("%-22s %10.3f ms %10.3f ms %8.1fx" % (
            name, t_py * 1e3, t_cc * 1e3, t_py / t_cc))
    print("max |python - compiled| over all workloads: %.3e" % worst_dev)
    return 0 if worst_dev < 1e-10 else 1


if __name__ == "__main__":
    raise SystemExit(main())
