// Serial vs OpenMP timing for the hot kernels, with a bitwise equality check
// between the two paths on every case. The parallel kernels assign whole
// output elements to threads and keep each element's inner loop order fixed,
// so the outputs must match the serial path exactly, not just approximately.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gleak/kernels.hpp"
#include "gleak/rng.hpp"

using namespace gleak;

namespace {

kern::Par par(bool omp_on) { return omp_on ? kern::Par::omp : kern::Par::serial; }

double time_call(const std::function<void()>& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

struct Case {
    std::string name;
    double flops; // per call, 0 = unknown
    std::function<void(bool)> run; // arg: omp on
    std::function<const std::vector<double>&()> out;
};

void report(const Case& c, int reps) {
    std::vector<double> serial_out, omp_out;
    c.run(false);
    serial_out = c.out();
    c.run(true);
    omp_out = c.out();
    const bool exact = serial_out.size() == omp_out.size() &&
                       std::memcmp(serial_out.data(), omp_out.data(),
                                   serial_out.size() * sizeof(double)) == 0;
    const double ts = time_call([&] { c.run(false); }, reps);
    const double tp = time_call([&] { c.run(true); }, reps);
    std::printf("%-22s %10.3f ms %10.3f ms  x%.2f", c.name.c_str(), ts * 1e3, tp * 1e3,
                ts / tp);
    if (c.flops > 0) std::printf("  %6.2f GF/s", c.flops / tp * 1e-9);
    std::printf("  %s\n", exact ? "bitwise-equal" : "MISMATCH");
}

} // namespace

int main(int argc, char** argv) {
    int reps = 5;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--quick") == 0) reps = 2;

#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("openmp: compiled out\n");
#endif
    std::printf("%-22s %13s %13s %6s\n", "kernel", "serial", "openmp", "ratio");

    // reduction kernels
    const std::size_t n = 1u << 21;
    auto a = random_vec(n, 11), b = random_vec(n, 22);
    std::vector<double> scalar(1);
    report({"dot 2^21", 2.0 * double(n),
            [&](bool p) { scalar[0] = kern::dot(a.data(), b.data(), n, p); },
            [&]() -> const std::vector<double>& { return scalar; }},
           reps);
    report({"sum 2^21", double(n),
            [&](bool p) { scalar[0] = kern::sum(a.data(), n, p); },
            [&]() -> const std::vector<double>& { return scalar; }},
           reps);
    report({"sq-diff 2^21", 3.0 * double(n),
            [&](bool p) { scalar[0] = kern::squared_diff_sum(a.data(), b.data(), n, p); },
            [&]() -> const std::vector<double>& { return scalar; }},
           reps);

    // convolution, forward and both adjoints, at denoiser-like shapes
    kern::ConvDims d{16, 32, 32, 32, 3, 3, 1, 1};
    auto x = random_vec(d.ci * d.h * d.w, 33);
    auto w = random_vec(d.co * d.ci * d.kh * d.kw, 44);
    std::vector<double> y(d.co * d.oh() * d.ow());
    auto gy = random_vec(y.size(), 55);
    std::vector<double> gx(x.size()), gw(w.size());
    const double cflops = 2.0 * double(d.co) * d.oh() * d.ow() * d.ci * d.kh * d.kw;
    report({"conv2d 16->32 32x32", cflops,
            [&](bool p) { kern::conv2d(x.data(), w.data(), y.data(), d, par(p)); },
            [&]() -> const std::vector<double>& { return y; }},
           reps);
    report({"conv2d igrad", cflops,
            [&](bool p) { kern::conv2d_igrad(gy.data(), w.data(), gx.data(), d, par(p)); },
            [&]() -> const std::vector<double>& { return gx; }},
           reps);
    report({"conv2d kgrad", cflops,
            [&](bool p) { kern::conv2d_kgrad(gy.data(), x.data(), gw.data(), d, par(p)); },
            [&]() -> const std::vector<double>& { return gw; }},
           reps);

    // dense layer shapes
    const std::size_t rows = 512, cols = 4096;
    auto m = random_vec(rows * cols, 66);
    auto v = random_vec(cols, 77);
    std::vector<double> mv(rows);
    report({"matvec 512x4096", 2.0 * double(rows) * cols,
            [&](bool p) { kern::matvec(m.data(), v.data(), mv.data(), rows, cols, par(p)); },
            [&]() -> const std::vector<double>& { return mv; }},
           reps);
    auto vr = random_vec(rows, 88);
    std::vector<double> vt(cols);
    report({"matvec_t 512x4096", 2.0 * double(rows) * cols,
            [&](bool p) { kern::matvec_t(m.data(), vr.data(), vt.data(), rows, cols, par(p)); },
            [&]() -> const std::vector<double>& { return vt; }},
           reps);
    return 0;
}
