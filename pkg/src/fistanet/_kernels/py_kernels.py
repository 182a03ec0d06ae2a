"""Pure numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available.  Semantics are identical to the compiled versions (same math,
same shapes); floating-point results agree to roundoff but not bit-for-bit
because summation orders differ.

Convolutions go through an im2col buffer: the nine shifted views of the
padded input are copied tap by tap into a [B, C*9, H*W] matrix (each copy is
a cheap strided memcpy), after which forward pass and both gradients are
single BLAS matmul calls.
"""

import numpy as np

NAME = "python"


def _im2col(x):
    """Padded tap matrix: x [B,C,H,W] -> cols [B, C*9, H*W]."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((B, C, 9, H * W))
    view = cols.reshape(B, C, 9, H, W)
    for t in range(9):
        dy, dx = divmod(t, 3)
        view[:, :, t] = xp[:, :, dy:dy + H, dx:dx + W]
    return cols.reshape(B, C * 9, H * W)


def conv3x3_fwd(x, k):
    """x [B,C,H,W], k [Co,C,3,3] -> [B,Co,H,W]; zero padding 1, stride 1."""
    B, C, H, W = x.shape
    Co = k.shape[0]
    km = np.ascontiguousarray(k, dtype=np.float64).reshape(Co, C * 9)
    out = np.matmul(km, _im2col(x))
    return out.reshape(B, Co, H, W)


def conv3x3_grad_input(gout, k):
    """Gradient of conv3x3_fwd w.r.t. x: full correlation with the flipped,
    channel-swapped kernel."""
    kswap = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv3x3_fwd(gout, kswap)


def conv3x3_grad_kernel(x, gout):
    """Gradient of conv3x3_fwd w.r.t. k: [Co,C,3,3]."""
    B, C, H, W = x.shape
    Co = gout.shape[1]
    g2 = np.ascontiguousarray(gout, dtype=np.float64).reshape(B, Co, H * W)
    cols = _im2col(x)
    gk = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
    return gk.reshape(Co, C, 3, 3)


def radon_fwd(img_flat, bin0, frac, n_detectors):
    """Pixel-driven projection.

    img_flat [NPIX]; bin0/frac [V,NPIX] precomputed per-view interpolation
    targets (left bin index and fractional weight).  Returns [V, n_detectors].
    """
    V = bin0.shape[0]
    sino = np.empty((V, n_detectors))
    for v in range(V):
        lo = np.bincount(bin0[v], weights=(1.0 - frac[v]) * img_flat, minlength=n_detectors)
        hi = np.bincount(bin0[v] + 1, weights=frac[v] * img_flat, minlength=n_detectors)
        sino[v] = lo + hi
    return sino


def radon_adj(sino, bin0, frac, n_pixels):
    """Exact transpose of radon_fwd: gather with the same weights."""
    V = bin0.shape[0]
    img = np.zeros(n_pixels)
    for v in range(V):
        row = sino[v]
        img += (1.0 - frac[v]) * row[bin0[v]] + frac[v] * row[bin0[v] + 1]
    return img
