#include "psinger/kernels.hpp"

#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace psinger::kernels {

namespace {
Impl g_impl = Impl::OpenMP;
int g_threads = 0;  // 0 = library default
}  // namespace

Impl impl() { return g_impl; }
void set_impl(Impl i) { g_impl = i; }

int threads() {
#ifdef _OPENMP
    return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int n) {
    g_threads = n;
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#endif
}

namespace {

inline double load_a(const double* a, size_t m, size_t k, size_t i, size_t p, bool transa) {
    return transa ? a[p * m + i] : a[i * k + p];
}
inline double load_b(const double* b, size_t k, size_t n, size_t p, size_t j, bool transb) {
    return transb ? b[j * k + p] : b[p * n + j];
}

inline void matmul_row(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                       bool transa, bool transb, size_t i) {
    double* ci = c + i * n;
    std::memset(ci, 0, n * sizeof(double));
    if (!transb) {
        // ikj order, streaming over b rows
        for (size_t p = 0; p < k; ++p) {
            double av = load_a(a, m, k, i, p, transa);
            const double* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    } else if (!transa) {
        // contiguous dot products; four independent partial sums break the
        // sequential FMA dependency chain so the loop vectorizes
        const double* ai = a + i * k;
        for (size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                s0 += ai[p] * bj[p];
                s1 += ai[p + 1] * bj[p + 1];
                s2 += ai[p + 2] * bj[p + 2];
                s3 += ai[p + 3] * bj[p + 3];
            }
            double acc = (s0 + s1) + (s2 + s3);
            for (; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = acc;
        }
    } else {
        for (size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (size_t p = 0; p < k; ++p) acc += a[p * m + i] * bj[p];
            ci[j] = acc;
        }
    }
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                   bool transa, bool transb) {
    for (size_t i = 0; i < m; ++i) matmul_row(a, b, c, m, k, n, transa, transb, i);
}

void matmul_omp(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                bool transa, bool transb) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)m; ++i)
        matmul_row(a, b, c, m, k, n, transa, transb, (size_t)i);
}

void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n, bool transa,
            bool transb) {
    if (g_impl == Impl::OpenMP)
        matmul_omp(a, b, c, m, k, n, transa, transb);
    else
        matmul_serial(a, b, c, m, k, n, transa, transb);
}

void im2col_1d(const double* x, size_t t, size_t c, size_t k, size_t dilation, size_t stride,
               double* cols) {
    size_t eff = dilation * (k - 1) + 1;
    long long pad = (long long)(eff - 1) / 2;
    size_t tout = (t + 2 * (size_t)pad - eff) / stride + 1;
    for (size_t to = 0; to < tout; ++to) {
        double* row = cols + to * c * k;
        for (size_t ci = 0; ci < c; ++ci) {
            for (size_t kt = 0; kt < k; ++kt) {
                long long ti = (long long)(to * stride) - pad + (long long)(kt * dilation);
                row[ci * k + kt] = (ti >= 0 && ti < (long long)t) ? x[(size_t)ti * c + ci] : 0.0;
            }
        }
    }
}

void col2im_1d(const double* cols, size_t t, size_t c, size_t k, size_t dilation, size_t stride,
               double* x_grad) {
    size_t eff = dilation * (k - 1) + 1;
    long long pad = (long long)(eff - 1) / 2;
    size_t tout = (t + 2 * (size_t)pad - eff) / stride + 1;
    for (size_t to = 0; to < tout; ++to) {
        const double* row = cols + to * c * k;
        for (size_t ci = 0; ci < c; ++ci) {
            for (size_t kt = 0; kt < k; ++kt) {
                long long ti = (long long)(to * stride) - pad + (long long)(kt * dilation);
                if (ti >= 0 && ti < (long long)t) x_grad[(size_t)ti * c + ci] += row[ci * k + kt];
            }
        }
    }
}

void im2col_2d(const double* x, size_t n, size_t c, size_t h, size_t w, size_t k, size_t stride,
               size_t pad, double* cols) {
    size_t ho = conv_out(h, k, stride, pad), wo = conv_out(w, k, stride, pad);
    size_t patch = c * k * k;
    for (size_t ni = 0; ni < n; ++ni) {
        const double* xn = x + ni * c * h * w;
        for (size_t oy = 0; oy < ho; ++oy) {
            for (size_t ox = 0; ox < wo; ++ox) {
                double* row = cols + ((ni * ho + oy) * wo + ox) * patch;
                size_t idx = 0;
                for (size_t ci = 0; ci < c; ++ci) {
                    const double* xc = xn + ci * h * w;
                    for (size_t ky = 0; ky < k; ++ky) {
                        long long iy = (long long)(oy * stride) + (long long)ky - (long long)pad;
                        for (size_t kx = 0; kx < k; ++kx, ++idx) {
                            long long ix = (long long)(ox * stride) + (long long)kx - (long long)pad;
                            row[idx] = (iy >= 0 && iy < (long long)h && ix >= 0 && ix < (long long)w)
                                           ? xc[(size_t)iy * w + (size_t)ix]
                                           : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im_2d(const double* cols, size_t n, size_t c, size_t h, size_t w, size_t k, size_t stride,
               size_t pad, double* x_grad) {
    size_t ho = conv_out(h, k, stride, pad), wo = conv_out(w, k, stride, pad);
    size_t patch = c * k * k;
    for (size_t ni = 0; ni < n; ++ni) {
        double* xn = x_grad + ni * c * h * w;
        for (size_t oy = 0; oy < ho; ++oy) {
            for (size_t ox = 0; ox < wo; ++ox) {
                const double* row = cols + ((ni * ho + oy) * wo + ox) * patch;
                size_t idx = 0;
                for (size_t ci = 0; ci < c; ++ci) {
                    double* xc = xn + ci * h * w;
                    for (size_t ky = 0; ky < k; ++ky) {
                        long long iy = (long long)(oy * stride) + (long long)ky - (long long)pad;
                        for (size_t kx = 0; kx < k; ++kx, ++idx) {
                            long long ix = (long long)(ox * stride) + (long long)kx - (long long)pad;
                            if (iy >= 0 && iy < (long long)h && ix >= 0 && ix < (long long)w)
                                xc[(size_t)iy * w + (size_t)ix] += row[idx];
                        }
                    }
                }
            }
        }
    }
}

void im2col_3d(const double* x, size_t c, size_t t, size_t h, size_t w, size_t kt, size_t kh,
               size_t kw, size_t st, size_t sh, size_t sw, size_t pt, size_t ph, size_t pw,
               double* cols) {
    size_t to = conv_out(t, kt, st, pt), ho = conv_out(h, kh, sh, ph), wo = conv_out(w, kw, sw, pw);
    size_t patch = c * kt * kh * kw;
    for (size_t ot = 0; ot < to; ++ot)
        for (size_t oy = 0; oy < ho; ++oy)
            for (size_t ox = 0; ox < wo; ++ox) {
                double* row = cols + ((ot * ho + oy) * wo + ox) * patch;
                size_t idx = 0;
                for (size_t ci = 0; ci < c; ++ci)
                    for (size_t zt = 0; zt < kt; ++zt) {
                        long long it = (long long)(ot * st) + (long long)zt - (long long)pt;
                        for (size_t zy = 0; zy < kh; ++zy) {
                            long long iy = (long long)(oy * sh) + (long long)zy - (long long)ph;
                            for (size_t zx = 0; zx < kw; ++zx, ++idx) {
                                long long ix = (long long)(ox * sw) + (long long)zx - (long long)pw;
                                bool in = it >= 0 && it < (long long)t && iy >= 0 &&
                                          iy < (long long)h && ix >= 0 && ix < (long long)w;
                                row[idx] = in ? x[((ci * t + (size_t)it) * h + (size_t)iy) * w +
                                                  (size_t)ix]
                                              : 0.0;
                            }
                        }
                    }
            }
}

void col2im_3d(const double* cols, size_t c, size_t t, size_t h, size_t w, size_t kt, size_t kh,
               size_t kw, size_t st, size_t sh, size_t sw, size_t pt, size_t ph, size_t pw,
               double* x_grad) {
    size_t to = conv_out(t, kt, st, pt), ho = conv_out(h, kh, sh, ph), wo = conv_out(w, kw, sw, pw);
    size_t patch = c * kt * kh * kw;
    for (size_t ot = 0; ot < to; ++ot)
        for (size_t oy = 0; oy < ho; ++oy)
            for (size_t ox = 0; ox < wo; ++ox) {
                const double* row = cols + ((ot * ho + oy) * wo + ox) * patch;
                size_t idx = 0;
                for (size_t ci = 0; ci < c; ++ci)
                    for (size_t zt = 0; zt < kt; ++zt) {
                        long long it = (long long)(ot * st) + (long long)zt - (long long)pt;
                        for (size_t zy = 0; zy < kh; ++zy) {
                            long long iy = (long long)(oy * sh) + (long long)zy - (long long)ph;
                            for (size_t zx = 0; zx < kw; ++zx, ++idx) {
                                long long ix = (long long)(ox * sw) + (long long)zx - (long long)pw;
                                if (it >= 0 && it < (long long)t && iy >= 0 && iy < (long long)h &&
                                    ix >= 0 && ix < (long long)w)
                                    x_grad[((ci * t + (size_t)it) * h + (size_t)iy) * w +
                                           (size_t)ix] += row[idx];
                            }
                        }
                    }
            }
}

}  // namespace psinger::kernels
