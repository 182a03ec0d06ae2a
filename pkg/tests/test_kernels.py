"""Parity between the compiled kernel backend and the pure-python fallback."""

import numpy as np
import pytest

from fistanet import _kernels
from fistanet.rng import Rng


def _pair():
    rng = Rng(21)
    x = rng.normal((2, 3, 8, 9))
    k = rng.normal((4, 3, 3, 3))
    return x, k


def test_backend_selection_roundtrip():
    original = _kernels.active_name()
    try:
        _kernels.use("python")
        assert _kernels.active_name() == "python"
        if _kernels.compiled_available():
            _kernels.use("compiled")
            assert _kernels.active_name() == "compiled"
    finally:
        _kernels.use(original)


def test_unknown_backend_rejected():
    with pytest.raises(Exception):
        _kernels.use("gpu")


@pytest.mark.skipif(not _kernels.compiled_available(), reason="no compiled backend")
def test_conv_forward_parity():
    x, k = _pair()
    py = _kernels.get_backend("python")
    cc = _kernels.get_backend("compiled")
    a = py.conv3x3_fwd(x, k)
    b = cc.conv3x3_fwd(x, k)
    assert a.shape == b.shape == (2, 4, 8, 9)
    assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(a).max())


@pytest.mark.skipif(not _kernels.compiled_available(), reason="no compiled backend")
def test_conv_gradient_parity():
    x, k = _pair()
    g = Rng(22).normal((2, 4, 8, 9))
    py = _kernels.get_backend("python")
    cc = _kernels.get_backend("compiled")
    gi_a = py.conv3x3_grad_input(g, k)
    gi_b = cc.conv3x3_grad_input(g, k)
    gk_a = py.conv3x3_grad_kernel(x, g)
    gk_b = cc.conv3x3_grad_kernel(x, g)
    assert np.abs(gi_a - gi_b).max() <= 1e-12 * max(1.0, np.abs(gi_a).max())
    assert np.abs(gk_a - gk_b).max() <= 1e-12 * max(1.0, np.abs(gk_a).max())


@pytest.mark.skipif(not _kernels.compiled_available(), reason="no compiled backend")
def test_radon_kernel_parity():
    rng = Rng(23)
    n_pix, n_det = 64, 12
    img = rng.normal(n_pix)
    bin0 = np.array([rng.integer_below(n_det - 1) for _ in range(n_pix)], dtype=np.int64)
    frac = rng.uniform(n_pix)
    py = _kernels.get_backend("python")
    cc = _kernels.get_backend("compiled")
    a = py.radon_fwd(img, bin0[None, :], frac[None, :], n_det)
    b = cc.radon_fwd(img, bin0[None, :], frac[None, :], n_det)
    assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(a).max())
    sino = rng.normal((1, n_det))
    aa = py.radon_adj(sino, bin0[None, :], frac[None, :], n_pix)
    bb = cc.radon_adj(sino, bin0[None, :], frac[None, :], n_pix)
    assert np.abs(aa - bb).max() <= 1e-12 * max(1.0, np.abs(aa).max())


def test_python_backend_conv_against_direct_loop():
    x, k = _pair()
    py = _kernels.get_backend("python")
    out = py.conv3x3_fwd(x, k)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for b in range(2):
        for co in range(4):
            for ci in range(3):
                for dy in range(3):
                    for dx in range(3):
                        ref[b, co] += (
                            k[co, ci, dy, dx]
                            * xp[b, ci, dy : dy + 8, dx : dx + 9]
                        )
    assert np.abs(out - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())
