/* Hot numeric kernels: 3x3 convolution (forward + gradients) and the
 * pixel-driven Radon pair.
 *
 * All loops run in a fixed order so results are bit-reproducible run to run.
 * The convolution inner loops are written so the compiler can vectorize them
 * without reassociating any floating-point sum: the forward pass accumulates
 * independent output pixels, and the kernel gradient keeps per-column partial
 * sums that are reduced sequentially (fixed order) at the end.
 */

#include "_kernels_impl.h"

#include <string.h>

void fn_conv3x3_fwd(const double *restrict xpad, const double *restrict k,
                    double *restrict out,
                    ptrdiff_t B, ptrdiff_t C, ptrdiff_t Co,
                    ptrdiff_t H, ptrdiff_t W)
{
    const ptrdiff_t Hp = H + 2, Wp = W + 2;
    double acc[4096]; /* per-row accumulator; W <= 4096 enforced by wrapper */

    for (ptrdiff_t b = 0; b < B; b++) {
        for (ptrdiff_t co = 0; co < Co; co++) {
            double *orow0 = out + (b * Co + co) * H * W;
            for (ptrdiff_t y = 0; y < H; y++) {
                for (ptrdiff_t x = 0; x < W; x++)
                    acc[x] = 0.0;
                for (ptrdiff_t ci = 0; ci < C; ci++) {
                    const double *xpl = xpad + (b * C + ci) * Hp * Wp;
                    const double *r0 = xpl + y * Wp;
                    const double *r1 = r0 + Wp;
                    const double *r2 = r1 + Wp;
                    const double *kk = k + (co * C + ci) * 9;
                    const double k00 = kk[0], k01 = kk[1], k02 = kk[2];
                    const double k10 = kk[3], k11 = kk[4], k12 = kk[5];
                    const double k20 = kk[6], k21 = kk[7], k22 = kk[8];
                    for (ptrdiff_t x = 0; x < W; x++) {
                        acc[x] += k00 * r0[x] + k01 * r0[x + 1] + k02 * r0[x + 2]
                                + k10 * r1[x] + k11 * r1[x + 1] + k12 * r1[x + 2]
                                + k20 * r2[x] + k21 * r2[x + 1] + k22 * r2[x + 2];
                    }
                }
                memcpy(orow0 + y * W, acc, (size_t)W * sizeof(double));
            }
        }
    }
}

void fn_conv3x3_grad_kernel(const double *restrict xpad,
                            const double *restrict gout,
                            double *restrict gk,
                            ptrdiff_t B, ptrdiff_t C, ptrdiff_t Co,
                            ptrdiff_t H, ptrdiff_t W)
{
    const ptrdiff_t Hp = H + 2, Wp = W + 2;
    /* per-tap, per-column partial sums accumulated over rows */
    double vacc[9][4096];

    for (ptrdiff_t b = 0; b < B; b++) {
        for (ptrdiff_t co = 0; co < Co; co++) {
            const double *gpl = gout + (b * Co + co) * H * W;
            for (ptrdiff_t ci = 0; ci < C; ci++) {
                const double *xpl = xpad + (b * C + ci) * Hp * Wp;
                for (int t = 0; t < 9; t++)
                    for (ptrdiff_t x = 0; x < W; x++)
                        vacc[t][x] = 0.0;
                for (ptrdiff_t y = 0; y < H; y++) {
                    const double *g = gpl + y * W;
                    const double *r0 = xpl + y * Wp;
                    const double *r1 = r0 + Wp;
                    const double *r2 = r1 + Wp;
                    for (ptrdiff_t x = 0; x < W; x++) {
                        const double gv = g[x];
                        vacc[0][x] += gv * r0[x];
                        vacc[1][x] += gv * r0[x + 1];
                        vacc[2][x] += gv * r0[x + 2];
                        vacc[3][x] += gv * r1[x];
                        vacc[4][x] += gv * r1[x + 1];
                        vacc[5][x] += gv * r1[x + 2];
                        vacc[6][x] += gv * r2[x];
                        vacc[7][x] += gv * r2[x + 1];
                        vacc[8][x] += gv * r2[x + 2];
                    }
                }
                double *gg = gk + (co * C + ci) * 9;
                for (int t = 0; t < 9; t++) {
                    double s = 0.0;
                    for (ptrdiff_t x = 0; x < W; x++)
                        s += vacc[t][x];
                    gg[t] += s;
                }
            }
        }
    }
}

void fn_radon_fwd(const double *restrict img, const int64_t *restrict bin0,
                  const double *restrict frac, double *restrict sino,
                  ptrdiff_t V, ptrdiff_t NPIX, ptrdiff_t P)
{
    for (ptrdiff_t v = 0; v < V; v++) {
        const int64_t *b0 = bin0 + v * NPIX;
        const double *fr = frac + v * NPIX;
        double *srow = sino + v * P;
        for (ptrdiff_t d = 0; d < P; d++)
            srow[d] = 0.0;
        for (ptrdiff_t p = 0; p < NPIX; p++) {
            const int64_t i0 = b0[p];
            const double f = fr[p], val = img[p];
            srow[i0] += (1.0 - f) * val;
            srow[i0 + 1] += f * val;
        }
    }
}

void fn_radon_adj(const double *restrict sino, const int64_t *restrict bin0,
                  const double *restrict frac, double *restrict img,
                  ptrdiff_t V, ptrdiff_t NPIX, ptrdiff_t P)
{
    for (ptrdiff_t p = 0; p < NPIX; p++)
        img[p] = 0.0;
    for (ptrdiff_t v = 0; v < V; v++) {
        const int64_t *b0 = bin0 + v * NPIX;
        const double *fr = frac + v * NPIX;
        const double *srow = sino + v * P;
        for (ptrdiff_t p = 0; p < NPIX; p++) {
            const int64_t i0 = b0[p];
            const double f = fr[p];
            img[p] += (1.0 - f) * srow[i0] + f * srow[i0 + 1];
        }
    }
}
