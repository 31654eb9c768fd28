#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gleak/kernels.hpp"
#include "gleak/rng.hpp"

using namespace gleak;
using kern::Par;

namespace {

std::vector<double> rnd(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// plain long double accumulation as the reduction oracle
long double ref_sum(const std::vector<double>& a) {
    long double s = 0;
    for (double v : a) s += (long double)v;
    return s;
}

long double ref_dot(const std::vector<double>& a, const std::vector<double>& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (long double)a[i] * b[i];
    return s;
}

// independent convolution with a different loop nest than the library kernel
void ref_conv2d(const std::vector<double>& x, const std::vector<double>& w,
                std::vector<double>& y, const kern::ConvDims& d) {
    const std::size_t oh = d.oh(), ow = d.ow();
    y.assign(d.co * oh * ow, 0.0);
    for (std::size_t kh = 0; kh < d.kh; ++kh)
        for (std::size_t kw = 0; kw < d.kw; ++kw)
            for (std::size_t ci = 0; ci < d.ci; ++ci)
                for (std::size_t co = 0; co < d.co; ++co)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const long iy = long(oy * d.stride + kh) - long(d.pad);
                            const long ix = long(ox * d.stride + kw) - long(d.pad);
                            if (iy < 0 || ix < 0 || iy >= long(d.h) || ix >= long(d.w)) continue;
                            y[(co * oh + oy) * ow + ox] +=
                                x[(ci * d.h + iy) * d.w + ix] *
                                w[((co * d.ci + ci) * d.kh + kh) * d.kw + kw];
                        }
}

} // namespace

TEST_CASE("blocked reductions match long double accumulation") {
    for (std::size_t n : {std::size_t(1), std::size_t(5), std::size_t(4095), std::size_t(4096),
                          std::size_t(4097), std::size_t(100000)}) {
        auto a = rnd(n, 100 + n), b = rnd(n, 200 + n);
        const double s = kern::sum(a.data(), n, false);
        const double d = kern::dot(a.data(), b.data(), n, false);
        CHECK(std::abs(s - double(ref_sum(a))) <= 1e-12 * std::max(1.0, std::abs(s)));
        CHECK(std::abs(d - double(ref_dot(a, b))) <= 1e-12 * std::max(1.0, std::abs(d)));
        long double sq = 0;
        for (std::size_t i = 0; i < n; ++i)
            sq += (long double)(a[i] - b[i]) * (a[i] - b[i]);
        const double q = kern::squared_diff_sum(a.data(), b.data(), n, false);
        CHECK(std::abs(q - double(sq)) <= 1e-12 * std::max(1.0, std::abs(q)));
    }
}

TEST_CASE("reductions are bitwise identical serial vs openmp") {
    for (std::size_t n : {std::size_t(3), std::size_t(4096), std::size_t(1) << 15,
                          (std::size_t(1) << 16) + 17}) {
        auto a = rnd(n, 300 + n), b = rnd(n, 400 + n);
        CHECK(kern::sum(a.data(), n, false) == kern::sum(a.data(), n, true));
        CHECK(kern::dot(a.data(), b.data(), n, false) == kern::dot(a.data(), b.data(), n, true));
        CHECK(kern::squared_diff_sum(a.data(), b.data(), n, false) ==
              kern::squared_diff_sum(a.data(), b.data(), n, true));
    }
}

TEST_CASE("conv2d matches an independent loop nest") {
    const kern::ConvDims cases[] = {
        {1, 5, 5, 1, 3, 3, 1, 0}, {3, 8, 8, 4, 3, 3, 1, 1}, {2, 9, 7, 3, 5, 5, 2, 2},
        {4, 16, 16, 8, 5, 5, 2, 2}, {1, 4, 4, 2, 1, 1, 1, 0},
    };
    for (const auto& d : cases) {
        auto x = rnd(d.ci * d.h * d.w, 7 * d.h + d.ci);
        auto w = rnd(d.co * d.ci * d.kh * d.kw, 13 * d.kh + d.co);
        std::vector<double> y(d.co * d.oh() * d.ow()), yr;
        kern::conv2d(x.data(), w.data(), y.data(), d, Par::serial);
        ref_conv2d(x, w, yr, d);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(std::abs(y[i] - yr[i]) <= 1e-12 * std::max(1.0, std::abs(yr[i])));
    }
}

TEST_CASE("conv2d hand-checked tiny case") {
    // 1x3x3 input, single 2x2 kernel, stride 1, no padding
    std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<double> w = {1, 0, 0, -1};
    kern::ConvDims d{1, 3, 3, 1, 2, 2, 1, 0};
    std::vector<double> y(4);
    kern::conv2d(x.data(), w.data(), y.data(), d, Par::serial);
    CHECK(y[0] == doctest::Approx(1 - 5).epsilon(0));
    CHECK(y[1] == doctest::Approx(2 - 6).epsilon(0));
    CHECK(y[2] == doctest::Approx(4 - 8).epsilon(0));
    CHECK(y[3] == doctest::Approx(5 - 9).epsilon(0));
}

TEST_CASE("conv2d gradients satisfy the adjoint identities") {
    // <gy, conv(x,w)> = <x, igrad(gy,w)> = <w, kgrad(gy,x)>
    const kern::ConvDims cases[] = {
        {2, 8, 8, 3, 3, 3, 1, 1}, {3, 9, 9, 2, 5, 5, 2, 2}, {1, 6, 5, 4, 3, 3, 2, 1},
    };
    for (const auto& d : cases) {
        auto x = rnd(d.ci * d.h * d.w, 31 + d.h);
        auto w = rnd(d.co * d.ci * d.kh * d.kw, 37 + d.co);
        const std::size_t ny = d.co * d.oh() * d.ow();
        auto gy = rnd(ny, 41 + ny);
        std::vector<double> y(ny), gx(x.size()), gw(w.size());
        kern::conv2d(x.data(), w.data(), y.data(), d, Par::serial);
        kern::conv2d_igrad(gy.data(), w.data(), gx.data(), d, Par::serial);
        kern::conv2d_kgrad(gy.data(), x.data(), gw.data(), d, Par::serial);
        const double a = kern::dot(gy.data(), y.data(), ny, false);
        const double b = kern::dot(x.data(), gx.data(), x.size(), false);
        const double c = kern::dot(w.data(), gw.data(), w.size(), false);
        CHECK(a == doctest::Approx(b).epsilon(1e-11));
        CHECK(a == doctest::Approx(c).epsilon(1e-11));
    }
}

TEST_CASE("per-element kernels are bitwise identical serial vs openmp") {
    kern::ConvDims d{8, 24, 24, 16, 3, 3, 1, 1};
    auto x = rnd(d.ci * d.h * d.w, 51);
    auto w = rnd(d.co * d.ci * d.kh * d.kw, 52);
    const std::size_t ny = d.co * d.oh() * d.ow();
    auto gy = rnd(ny, 53);
    std::vector<double> s1(ny), s2(ny);
    kern::conv2d(x.data(), w.data(), s1.data(), d, Par::serial);
    kern::conv2d(x.data(), w.data(), s2.data(), d, Par::omp);
    CHECK(std::memcmp(s1.data(), s2.data(), ny * sizeof(double)) == 0);

    std::vector<double> g1(x.size()), g2(x.size());
    kern::conv2d_igrad(gy.data(), w.data(), g1.data(), d, Par::serial);
    kern::conv2d_igrad(gy.data(), w.data(), g2.data(), d, Par::omp);
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);

    std::vector<double> k1(w.size()), k2(w.size());
    kern::conv2d_kgrad(gy.data(), x.data(), k1.data(), d, Par::serial);
    kern::conv2d_kgrad(gy.data(), x.data(), k2.data(), d, Par::omp);
    CHECK(std::memcmp(k1.data(), k2.data(), k1.size() * sizeof(double)) == 0);

    const std::size_t rows = 64, cols = 997;
    auto m = rnd(rows * cols, 54);
    auto v = rnd(cols, 55);
    std::vector<double> y1(rows), y2(rows);
    kern::matvec(m.data(), v.data(), y1.data(), rows, cols, Par::serial);
    kern::matvec(m.data(), v.data(), y2.data(), rows, cols, Par::omp);
    CHECK(std::memcmp(y1.data(), y2.data(), rows * sizeof(double)) == 0);
}

TEST_CASE("matvec family against hand loops") {
    const std::size_t rows = 7, cols = 11;
    auto m = rnd(rows * cols, 61);
    auto v = rnd(cols, 62);
    auto u = rnd(rows, 63);
    std::vector<double> y(rows), yt(cols), o(rows * cols);
    kern::matvec(m.data(), v.data(), y.data(), rows, cols, Par::serial);
    kern::matvec_t(m.data(), u.data(), yt.data(), rows, cols, Par::serial);
    kern::outer(u.data(), v.data(), o.data(), rows, cols, Par::serial);
    for (std::size_t r = 0; r < rows; ++r) {
        long double s = 0;
        for (std::size_t c = 0; c < cols; ++c) s += (long double)m[r * cols + c] * v[c];
        CHECK(y[r] == doctest::Approx(double(s)).epsilon(1e-12));
    }
    for (std::size_t c = 0; c < cols; ++c) {
        long double s = 0;
        for (std::size_t r = 0; r < rows; ++r) s += (long double)m[r * cols + c] * u[r];
        CHECK(yt[c] == doctest::Approx(double(s)).epsilon(1e-12));
    }
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) CHECK(o[r * cols + c] == u[r] * v[c]);

    // adjoint identity <u, Mv> = <v, M^T u>
    const double a = kern::dot(u.data(), y.data(), rows, false);
    const double b = kern::dot(v.data(), yt.data(), cols, false);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("sum_pool floor semantics and upsample round trip") {
    // 1 channel 5x5, factor 2: trailing row/col dropped
    auto x = rnd(25, 71);
    std::vector<double> y(4);
    kern::sum_pool(x.data(), y.data(), 1, 5, 5, 2, Par::serial);
    CHECK(y[0] == doctest::Approx(x[0] + x[1] + x[5] + x[6]).epsilon(1e-15));
    CHECK(y[3] == doctest::Approx(x[2 * 5 + 2] + x[2 * 5 + 3] + x[3 * 5 + 2] + x[3 * 5 + 3])
                      .epsilon(1e-15));

    auto z = rnd(2 * 3 * 3, 72);
    std::vector<double> up(2 * 6 * 6), back(2 * 3 * 3);
    kern::upsample_nearest(z.data(), up.data(), 2, 3, 3, 2, Par::serial);
    kern::sum_pool(up.data(), back.data(), 2, 6, 6, 2, Par::serial);
    for (std::size_t i = 0; i < back.size(); ++i)
        CHECK(back[i] == doctest::Approx(4.0 * z[i]).epsilon(1e-15));
}

TEST_CASE("parallel mode toggle is restored around forced modes") {
    const kern::Par before = kern::par_mode();
    kern::par_mode() = kern::Par::serial;
    auto a = rnd(1 << 15, 81);
    const double s_forced = kern::sum(a.data(), a.size(), kern::use_omp(a.size()));
    kern::par_mode() = before;
    const double s_auto = kern::sum(a.data(), a.size(), kern::use_omp(a.size()));
    CHECK(s_forced == s_auto);
}
