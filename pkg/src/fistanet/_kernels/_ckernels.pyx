# cython: boundscheck=False, wraparound=False, language_level=3
"""Cython wrapper around the C kernels (see _kernels_impl.c).

Exposes the same functions/signatures as py_kernels so the dispatch layer can
swap backends freely.  Shape checks and array preparation happen here; the C
side assumes contiguous float64 buffers.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"

cdef extern from "_kernels_impl.h":
    void fn_conv3x3_fwd(const double *xpad, const double *k, double *out,
                        Py_ssize_t B, Py_ssize_t C, Py_ssize_t Co,
                        Py_ssize_t H, Py_ssize_t W) nogil
    void fn_conv3x3_grad_kernel(const double *xpad, const double *gout, double *gk,
                                Py_ssize_t B, Py_ssize_t C, Py_ssize_t Co,
                                Py_ssize_t H, Py_ssize_t W) nogil
    void fn_radon_fwd(const double *img, const cnp.int64_t *bin0, const double *frac,
                      double *sino, Py_ssize_t V, Py_ssize_t NPIX, Py_ssize_t P) nogil
    void fn_radon_adj(const double *sino, const cnp.int64_t *bin0, const double *frac,
                      double *img, Py_ssize_t V, Py_ssize_t NPIX, Py_ssize_t P) nogil


def _pad_nchw(x):
    return np.pad(np.ascontiguousarray(x, dtype=np.float64),
                  ((0, 0), (0, 0), (1, 1), (1, 1)))


def conv3x3_fwd(x, k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = k.shape[0]
    if W > 4096:
        raise ValueError("image width above the 4096 kernel limit")
    cdef cnp.ndarray[double, ndim=4] xp = _pad_nchw(x)
    cdef cnp.ndarray[double, ndim=4] kk = np.ascontiguousarray(k, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] out = np.empty((B, Co, H, W))
    with nogil:
        fn_conv3x3_fwd(&xp[0, 0, 0, 0], &kk[0, 0, 0, 0], &out[0, 0, 0, 0],
                       B, C, Co, H, W)
    return out


def conv3x3_grad_input(gout, k):
    kswap = np.ascontiguousarray(
        np.asarray(k)[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv3x3_fwd(gout, kswap)


def conv3x3_grad_kernel(x, gout):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t Co = gout.shape[1]
    cdef cnp.ndarray[double, ndim=4] xp = _pad_nchw(x)
    cdef cnp.ndarray[double, ndim=4] g = np.ascontiguousarray(gout, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=4] gk = np.zeros((Co, C, 3, 3))
    with nogil:
        fn_conv3x3_grad_kernel(&xp[0, 0, 0, 0], &g[0, 0, 0, 0], &gk[0, 0, 0, 0],
                               B, C, Co, H, W)
    return gk


def radon_fwd(img_flat, bin0, frac, n_detectors):
    cdef Py_ssize_t V = bin0.shape[0], NPIX = bin0.shape[1]
    cdef Py_ssize_t P = n_detectors
    cdef cnp.ndarray[double, ndim=1] im = np.ascontiguousarray(img_flat, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] b0 = np.ascontiguousarray(bin0, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2] fr = np.ascontiguousarray(frac, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] sino = np.empty((V, P))
    with nogil:
        fn_radon_fwd(&im[0], &b0[0, 0], &fr[0, 0], &sino[0, 0], V, NPIX, P)
    return sino


def radon_adj(sino, bin0, frac, n_pixels):
    cdef Py_ssize_t V = bin0.shape[0], NPIX = bin0.shape[1]
    cdef Py_ssize_t P = sino.shape[1]
    cdef cnp.ndarray[double, ndim=2] s = np.ascontiguousarray(sino, dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] b0 = np.ascontiguousarray(bin0, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=2] fr = np.ascontiguousarray(frac, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] img = np.empty(n_pixels)
    with nogil:
        fn_radon_adj(&s[0, 0], &b0[0, 0], &fr[0, 0], &img[0], V, NPIX, P)
    return img
