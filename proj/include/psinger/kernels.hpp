#pragma once

#include <cstddef>

// Dense kernels behind the autodiff ops. Every kernel has a serial reference
// implementation and an OpenMP variant; the dispatchers pick per the global
// impl setting. Parallel loops are over independent output elements, so both
// variants are bit-identical.
namespace psinger::kernels {

enum class Impl { Serial, OpenMP };

Impl impl();
void set_impl(Impl i);
int threads();
void set_threads(int n);

// c[m x n] = a[m x k] * b[k x n]; transa/transb read the operand transposed
// (a is then stored k x m, b is n x k).
void matmul_serial(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                   bool transa = false, bool transb = false);
void matmul_omp(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                bool transa = false, bool transb = false);
void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
            bool transa = false, bool transb = false);

// im2col for 1-D sequences: x is T x C (time-major), zero padding so that the
// output length is ceil(T / stride). cols is T_out x (C * K); column layout is
// (c, kt) with kt fastest.
void im2col_1d(const double* x, size_t t, size_t c, size_t k, size_t dilation, size_t stride,
               double* cols);
void col2im_1d(const double* cols, size_t t, size_t c, size_t k, size_t dilation, size_t stride,
               double* x_grad);  // accumulates

// im2col for batched 2-D images: x is N x C x H x W, output spatial dims
// Ho = (H + 2p - K) / stride + 1 (caller picks p). cols is (N*Ho*Wo) x (C*K*K).
void im2col_2d(const double* x, size_t n, size_t c, size_t h, size_t w, size_t k, size_t stride,
               size_t pad, double* cols);
void col2im_2d(const double* cols, size_t n, size_t c, size_t h, size_t w, size_t k, size_t stride,
               size_t pad, double* x_grad);

// im2col for 3-D volumes: x is C x T x H x W with per-axis kernel/stride/pad.
void im2col_3d(const double* x, size_t c, size_t t, size_t h, size_t w, size_t kt, size_t kh,
               size_t kw, size_t st, size_t sh, size_t sw, size_t pt, size_t ph, size_t pw,
               double* cols);
void col2im_3d(const double* cols, size_t c, size_t t, size_t h, size_t w, size_t kt, size_t kh,
               size_t kw, size_t st, size_t sh, size_t sw, size_t pt, size_t ph, size_t pw,
               double* x_grad);

inline size_t conv_out(size_t in, size_t k, size_t stride, size_t pad, size_t dilation = 1) {
    size_t eff = dilation * (k - 1) + 1;
    return (in + 2 * pad - eff) / stride + 1;
}

}  // namespace psinger::kernels
