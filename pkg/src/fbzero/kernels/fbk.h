/* Fused elementwise and row-wise kernels for the network stack.
 *
 * mish(x) = x * tanh(softplus(x)) is evaluated with a single exponential:
 * tanh(log(1 + e)) = n / (n + 2) with n = e (e + 2), e = exp(x).
 * Inputs above 20 are clamped inside the exponential; there the result is x
 * to float32 precision.
 */
#ifndef FBK_H
#define FBK_H

#include <math.h>

static void fbk_mish_fwd(const float *restrict x, float *restrict y, long n)
{
    #pragma omp simd
    for (long i = 0; i < n; i++) {
        float xi = x[i];
        float e = expf(fminf(xi, 20.0f));
        float q = e * (e + 2.0f);
        y[i] = xi - 2.0f * xi / (q + 2.0f);
    }
}

static void fbk_mish_bwd(const float *restrict x, const float *restrict g,
                         float *restrict dx, long n)
{
    #pragma omp simd
    for (long i = 0; i < n; i++) {
        float xi = x[i];
        float e = expf(fminf(xi, 20.0f));
        float q = e * (e + 2.0f);
        float r = 1.0f / (q + 2.0f);
        float t = q * r;
        dx[i] = g[i] * (t + xi * 4.0f * e * (e + 1.0f) * r * r);
    }
}

/* Row-wise layer normalization over the last axis, affine applied. */
static void fbk_layernorm_fwd(const float *restrict x, const float *restrict gamma,
                              const float *restrict beta, float *restrict y,
                              float *restrict xhat, float *restrict rstd,
                              long rows, long cols, float eps)
{
    for (long r = 0; r < rows; r++) {
        const float *xr = x + r * cols;
        double s = 0.0;
        for (long c = 0; c < cols; c++) s += xr[c];
        float mean = (float)(s / cols);
        double v = 0.0;
        for (long c = 0; c < cols; c++) {
            float d = xr[c] - mean;
            v += (double)d * d;
        }
        float rs = (float)(1.0 / sqrt(v / cols + eps));
        rstd[r] = rs;
        float *hr = xhat + r * cols;
        float *yr = y + r * cols;
        #pragma omp simd
        for (long c = 0; c < cols; c++) {
            float h = (xr[c] - mean) * rs;
            hr[c] = h;
            yr[c] = h * gamma[c] + beta[c];
        }
    }
}

/* dgamma and dbeta are accumulated (caller zeroes them). */
static void fbk_layernorm_bwd(const float *restrict g, const float *restrict xhat,
                              const float *restrict rstd, const float *restrict gamma,
                              float *restrict dx, float *restrict dgamma,
                              float *restrict dbeta, long rows, long cols)
{
    for (long r = 0; r < rows; r++) {
        const float *gr = g + r * cols;
        const float *hr = xhat + r * cols;
        double s1 = 0.0, s2 = 0.0;
        for (long c = 0; c < cols; c++) {
            float dh = gr[c] * gamma[c];
            s1 += dh;
            s2 += (double)dh * hr[c];
            dgamma[c] += gr[c] * hr[c];
            dbeta[c] += gr[c];
        }
        float m1 = (float)(s1 / cols);
        float m2 = (float)(s2 / cols);
        float rs = rstd[r];
        float *dr = dx + r * cols;
        #pragma omp simd
        for (long c = 0; c < cols; c++) {
            dr[c] = rs * (gr[c] * gamma[c] - m1 - hr[c] * m2);
        }
    }
}

#endif

#ifndef FBK_ASSIGN_H
#define FBK_ASSIGN_H
#include <stdlib.h>

/* Minimum-cost assignment of rows to columns (rows <= cols) by shortest
 * augmenting paths with dual potentials, O(rows^2 cols).  cost is row-major
 * rows x cols; col_of_row receives the chosen column of every row.
 * A large finite sentinel stands in for infinity because the unit is built
 * with -ffast-math.  Returns 0 on success, -1 on allocation failure.
 */
static int fbk_assign(const double *cost, long rows, long cols, long *col_of_row)
{
    const double BIG = 1e300;
    double *u = calloc(rows + 1, sizeof(double));
    double *v = calloc(cols + 1, sizeof(double));
    double *minv = malloc((cols + 1) * sizeof(double));
    long *p = calloc(cols + 1, sizeof(long));
    long *way = calloc(cols + 1, sizeof(long));
    char *used = malloc(cols + 1);
    if (!u || !v || !minv || !p || !way || !used) {
        free(u); free(v); free(minv); free(p); free(way); free(used);
        return -1;
    }
    for (long i = 1; i <= rows; i++) {
        p[0] = i;
        long j0 = 0;
        for (long j = 0; j <= cols; j++) { minv[j] = BIG; used[j] = 0; }
        do {
            used[j0] = 1;
            long i0 = p[j0], j1 = 0;
            double delta = BIG;
            for (long j = 1; j <= cols; j++) {
                if (used[j]) continue;
                double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (long j = 0; j <= cols; j++) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            long j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    for (long j = 1; j <= cols; j++)
        if (p[j]) col_of_row[p[j] - 1] = j - 1;
    free(u); free(v); free(minv); free(p); free(way); free(used);
    return 0;
}
#endif
