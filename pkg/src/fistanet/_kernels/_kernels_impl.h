#ifndef FISTANET_KERNELS_IMPL_H
#define FISTANET_KERNELS_IMPL_H

#include <stddef.h>
#include <stdint.h>

/* 3x3 same-padding convolution, NCHW layout, float64.
 * xpad  [B, C, H+2, W+2] zero-padded input
 * k     [Co, C, 9] kernel taps in row-major (dy*3+dx) order
 * out   [B, Co, H, W] overwritten
 */
void fn_conv3x3_fwd(const double *xpad, const double *k, double *out,
                    ptrdiff_t B, ptrdiff_t C, ptrdiff_t Co,
                    ptrdiff_t H, ptrdiff_t W);

/* Kernel gradient: gk [Co, C, 9] must be zeroed by the caller. */
void fn_conv3x3_grad_kernel(const double *xpad, const double *gout, double *gk,
                            ptrdiff_t B, ptrdiff_t C, ptrdiff_t Co,
                            ptrdiff_t H, ptrdiff_t W);

/* Pixel-driven Radon projection with linear interpolation.
 * img [NPIX]; bin0/frac [V, NPIX]; sino [V, P] overwritten.
 * Caller guarantees 0 <= bin0 and bin0+1 < P for every entry.
 */
void fn_radon_fwd(const double *img, const int64_t *bin0, const double *frac,
                  double *sino, ptrdiff_t V, ptrdiff_t NPIX, ptrdiff_t P);

/* Exact transpose of fn_radon_fwd; img [NPIX] overwritten. */
void fn_radon_adj(const double *sino, const int64_t *bin0, const double *frac,
                  double *img, ptrdiff_t V, ptrdiff_t NPIX, ptrdiff_t P);

#endif
