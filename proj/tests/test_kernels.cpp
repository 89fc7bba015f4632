#include <doctest.h>

#include <vector>

#include "psinger/kernels.hpp"
#include "psinger/rng.hpp"

using namespace psinger;
namespace k = psinger::kernels;

namespace {
std::vector<double> randvec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}
}  // namespace

TEST_CASE("matmul omp matches serial reference bit-exactly") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed + 100);
        size_t m = size_t(rng.uniform_int(1, 17)), kk = size_t(rng.uniform_int(1, 17)),
               n = size_t(rng.uniform_int(1, 17));
        auto a = randvec(m * kk, seed * 3 + 1), b = randvec(kk * n, seed * 3 + 2);
        for (int ta = 0; ta < 2; ++ta)
            for (int tb = 0; tb < 2; ++tb) {
                std::vector<double> cs(m * n), cp(m * n);
                k::matmul_serial(a.data(), b.data(), cs.data(), m, kk, n, ta, tb);
                k::matmul_omp(a.data(), b.data(), cp.data(), m, kk, n, ta, tb);
                CHECK(cs == cp);
            }
    }
}

TEST_CASE("matmul serial matches naive triple loop") {
    size_t m = 4, kk = 5, n = 3;
    auto a = randvec(m * kk, 1), b = randvec(kk * n, 2);
    std::vector<double> c(m * n), ref(m * n, 0.0);
    k::matmul_serial(a.data(), b.data(), c.data(), m, kk, n);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            for (size_t p = 0; p < kk; ++p) ref[i * n + j] += a[i * kk + p] * b[p * n + j];
    for (size_t i = 0; i < m * n; ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("transposed operand layouts agree with explicit transposition") {
    size_t m = 3, kk = 4, n = 5;
    auto a = randvec(m * kk, 3), b = randvec(kk * n, 4);
    std::vector<double> at(kk * m), bt(n * kk);
    for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < kk; ++p) at[p * m + i] = a[i * kk + p];
    for (size_t p = 0; p < kk; ++p)
        for (size_t j = 0; j < n; ++j) bt[j * kk + p] = b[p * n + j];
    std::vector<double> c0(m * n), c1(m * n), c2(m * n);
    k::matmul_serial(a.data(), b.data(), c0.data(), m, kk, n);
    k::matmul_serial(at.data(), b.data(), c1.data(), m, kk, n, true, false);
    k::matmul_serial(a.data(), bt.data(), c2.data(), m, kk, n, false, true);
    for (size_t i = 0; i < m * n; ++i) {
        CHECK(c1[i] == doctest::Approx(c0[i]).epsilon(1e-12));
        CHECK(c2[i] == doctest::Approx(c0[i]).epsilon(1e-12));
    }
}

TEST_CASE("im2col/col2im 1d round trip counts each tap once") {
    size_t t = 7, c = 2, kk = 3;
    auto x = randvec(t * c, 5);
    std::vector<double> cols(t * c * kk);
    k::im2col_1d(x.data(), t, c, kk, 1, 1, cols.data());
    // forward of identity weights: center tap must reproduce x
    for (size_t ti = 0; ti < t; ++ti)
        for (size_t ci = 0; ci < c; ++ci) CHECK(cols[(ti * c + ci) * kk + 1] == x[ti * c + ci]);
    // col2im of all-ones cols counts how many patches touch each input cell
    std::vector<double> ones(t * c * kk, 1.0), touch(t * c, 0.0);
    k::col2im_1d(ones.data(), t, c, kk, 1, 1, touch.data());
    CHECK(touch[0] == 2.0);      // first frame: covered by taps 1 and 2
    CHECK(touch[1 * c] == 3.0);  // interior: all 3 taps
}

TEST_CASE("conv_out formula") {
    CHECK(k::conv_out(48, 7, 2, 3) == 24);
    CHECK(k::conv_out(24, 3, 2, 1) == 12);
    CHECK(k::conv_out(10, 3, 1, 1) == 10);
    CHECK(k::conv_out(10, 3, 1, 2, 2) == 10);  // dilation 2, pad 2
}
