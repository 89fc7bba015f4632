// Serial-vs-OpenMP kernel comparison: wall time plus a bit-exactness check,
// since the parallel loops are over independent outputs and must not change
// a single bit of the result.
#include <chrono>
#include <cstdio>
#include <vector>

#include "psinger/kernels.hpp"
#include "psinger/rng.hpp"

using namespace psinger;
using clk = std::chrono::steady_clock;

namespace {

double ms_since(clk::time_point t0) {
    return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

std::vector<double> randv(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

template <typename F>
double timed(F&& f, int reps) {
    f();  // warm up
    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r) f();
    return ms_since(t0) / reps;
}

void report(const char* name, double serial_ms, double omp_ms, bool exact) {
    std::printf("%-28s serial %8.2f ms   omp %8.2f ms   speedup %5.2fx   %s\n", name, serial_ms,
                omp_ms, serial_ms / omp_ms, exact ? "bit-exact" : "MISMATCH");
}

}  // namespace

int main() {
    std::printf("threads: %d\n", kernels::threads());

    {  // square matmul
        size_t m = 384, k = 384, n = 384;
        auto a = randv(m * k, 1), b = randv(k * n, 2);
        std::vector<double> cs(m * n), co(m * n);
        double ts = timed([&] { kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n); },
                          5);
        double to = timed([&] { kernels::matmul_omp(a.data(), b.data(), co.data(), m, k, n); }, 5);
        report("matmul 384^3", ts, to, cs == co);
    }
    {  // attention-shaped matmul (tall x wide)
        size_t m = 2048, k = 64, n = 2048;
        auto a = randv(m * k, 3), b = randv(k * n, 4);
        std::vector<double> cs(m * n), co(m * n);
        double ts = timed([&] { kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n); },
                          3);
        double to = timed([&] { kernels::matmul_omp(a.data(), b.data(), co.data(), m, k, n); }, 3);
        report("matmul 2048x64x2048", ts, to, cs == co);
    }
    {  // conv1d as im2col + matmul, mel-decoder shape
        size_t t = 512, c = 64, kk = 3;
        auto x = randv(t * c, 5), w = randv(c * c * kk, 6);
        std::vector<double> cols(t * c * kk), ys(t * c), yo(t * c);
        double ts = timed(
            [&] {
                kernels::im2col_1d(x.data(), t, c, kk, 1, 1, cols.data());
                kernels::matmul_serial(cols.data(), w.data(), ys.data(), t, c * kk, c, false,
                                       true);
            },
            5);
        double to = timed(
            [&] {
                kernels::im2col_1d(x.data(), t, c, kk, 1, 1, cols.data());
                kernels::matmul_omp(cols.data(), w.data(), yo.data(), t, c * kk, c, false, true);
            },
            5);
        report("conv1d 512x64 k3", ts, to, ys == yo);
    }
    {  // 3-D conv front end shape (lip video)
        size_t c = 1, t = 24, h = 48, w = 48, kt = 5, kh = 7, kw = 7;
        size_t to_ = kernels::conv_out(t, kt, 1, 2), ho = kernels::conv_out(h, kh, 2, 3),
               wo = kernels::conv_out(w, kw, 2, 3);
        size_t cout = 16, patch = c * kt * kh * kw, cols_n = to_ * ho * wo;
        auto x = randv(c * t * h * w, 7), wt = randv(cout * patch, 8);
        std::vector<double> cols(cols_n * patch), ys(cols_n * cout), yo(cols_n * cout);
        double ts = timed(
            [&] {
                kernels::im2col_3d(x.data(), c, t, h, w, kt, kh, kw, 1, 2, 2, 2, 3, 3,
                                   cols.data());
                kernels::matmul_serial(cols.data(), wt.data(), ys.data(), cols_n, patch, cout,
                                       false, true);
            },
            3);
        double to2 = timed(
            [&] {
                kernels::im2col_3d(x.data(), c, t, h, w, kt, kh, kw, 1, 2, 2, 2, 3, 3,
                                   cols.data());
                kernels::matmul_omp(cols.data(), wt.data(), yo.data(), cols_n, patch, cout, false,
                                    true);
            },
            3);
        report("conv3d 24x48x48 -> 16ch", ts, to2, ys == yo);
    }
    return 0;
}
