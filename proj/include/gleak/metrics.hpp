#ifndef GLEAK_METRICS_HPP
#define GLEAK_METRICS_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/kernels.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

// Reconstruction quality metrics. All four metrics are pure functions of the
// two images; repeated evaluation is bit identical. Inputs are expected in
// [0,1]; evaluate() clips copies first so callers can pass raw reconstructions.

namespace gleak::metrics {

template <class T>
Tensor<T> clip01(const Tensor<T>& img) {
    Tensor<T> out = img;
    for (auto& v : out.data) {
        if (v < T(0)) v = T(0);
        if (v > T(1)) v = T(1);
    }
    return out;
}

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("mse: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const std::size_t n = a.numel();
    if (n == 0) throw ShapeError("mse: empty image");
    Tensor<double> ad = a.template cast<double>();
    Tensor<double> bd = b.template cast<double>();
    double s = kern::squared_diff_sum(ad.data.data(), bd.data.data(), n, kern::use_omp(n));
    return s / double(n);
}

inline double psnr_from_mse(double m, double max_value = 1.0) {
    if (m <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10((max_value * max_value) / m);
}

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_value = 1.0) {
    return psnr_from_mse(mse(a, b), max_value);
}

// ---------------------------------------------------------------------------
// SSIM, the standard convention: channel-mean grayscale, 7x7 Gaussian window
// (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = 1, valid windows
// only. ssim(x, x) evaluates to exactly 1 because numerator and denominator
// go through identical arithmetic when the moments coincide.
// ---------------------------------------------------------------------------

inline const std::array<double, 49>& ssim_window() {
    static const std::array<double, 49> win = [] {
        std::array<double, 49> v{};
        const double sigma = 1.5;
        double s = 0.0;
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j) {
                const double dy = double(i - 3), dx = double(j - 3);
                v[std::size_t(i * 7 + j)] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                s += v[std::size_t(i * 7 + j)];
            }
        for (auto& e : v) e /= s;
        return v;
    }();
    return win;
}

template <class T>
Tensor<double> grayscale(const Tensor<T>& img) {
    if (img.ndim() != 3) throw ShapeError("grayscale: want {C,H,W}, got " + shape_str(img.shape));
    const std::size_t c = img.shape[0], h = img.shape[1], w = img.shape[2];
    Tensor<double> g({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += double(img.data[ch * h * w + i]);
        g.data[i] = acc / double(c);
    }
    return g;
}

template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("ssim: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    if (a.ndim() != 3) throw ShapeError("ssim: want {C,H,W}, got " + shape_str(a.shape));
    const std::size_t h = a.shape[1], w = a.shape[2];
    if (h < 7 || w < 7)
        throw WindowError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " smaller than the 7x7 window");
    const Tensor<double> ga = grayscale(a);
    const Tensor<double> gb = grayscale(b);
    const auto& win = ssim_window();
    const double C1 = 1e-4, C2 = 9e-4;
    const std::size_t oh = h - 6, ow = w - 6;
    const std::size_t n = oh * ow;
    const double total = kern::blocked_reduce<double>(n, kern::use_omp(n * 49), [&](std::size_t idx) {
        const std::size_t i = idx / ow, j = idx % ow;
        double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int u = 0; u < 7; ++u)
            for (int v = 0; v < 7; ++v) {
                const double wt = win[std::size_t(u * 7 + v)];
                const double x = ga.data[(i + std::size_t(u)) * w + (j + std::size_t(v))];
                const double y = gb.data[(i + std::size_t(u)) * w + (j + std::size_t(v))];
                ma += wt * x;
                mb += wt * y;
                saa += wt * x * x;
                sbb += wt * y * y;
                sab += wt * x * y;
            }
        const double va = saa - ma * ma;
        const double vb = sbb - mb * mb;
        const double vab = sab - ma * mb;
        const double num = (2.0 * ma * mb + C1) * (2.0 * vab + C2);
        const double den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        return num / den;
    });
    return total / double(n);
}

// ---------------------------------------------------------------------------
// LPIPS-lite. A fixed, seeded, untrained 3-stage conv pyramid stands in for a
// pretrained perceptual backbone: 3x3 stride-1 pad-1 convs of widths 8/16/32
// with relu, 2x2 mean pooling between stages. The distance is the sum over
// stages of the mean squared difference of channel-unit-normalized features.
// Magnitudes are only comparable between runs of this implementation; trends
// are the meaningful output.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kLpipsSeed = 0x6c70697073ULL;

namespace detail {

inline std::vector<double> lpips_filter(std::size_t stage, std::size_t ci, std::size_t co) {
    Rng rng(kLpipsSeed, {stream::lpips, std::uint64_t(stage)});
    std::vector<double> w(co * ci * 9);
    const double scale = 1.0 / std::sqrt(double(ci * 9));
    for (auto& v : w) v = rng.gaussian() * scale;
    return w;
}

// relu'd conv features for one stage, spatial dims preserved
inline std::vector<double> lpips_features(const std::vector<double>& x, std::size_t ci,
                                          std::size_t h, std::size_t w, std::size_t co,
                                          const std::vector<double>& filt) {
    kern::ConvDims d{ci, h, w, co, 3, 3, 1, 1};
    std::vector<double> y(co * h * w);
    kern::conv2d(x.data(), filt.data(), y.data(), d);
    for (auto& v : y)
        if (v < 0.0) v = 0.0;
    return y;
}

inline double lpips_stage_distance(const std::vector<double>& fa, const std::vector<double>& fb,
                                   std::size_t co, std::size_t h, std::size_t w) {
    const std::size_t hw = h * w;
    const double s = kern::blocked_reduce<double>(hw, kern::use_omp(hw * co), [&](std::size_t p) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t c = 0; c < co; ++c) {
            const double va = fa[c * hw + p], vb = fb[c * hw + p];
            sa += va * va;
            sb += vb * vb;
        }
        const double na = std::sqrt(sa) + 1e-10;
        const double nb = std::sqrt(sb) + 1e-10;
        double acc = 0.0;
        for (std::size_t c = 0; c < co; ++c) {
            const double d = fa[c * hw + p] / na - fb[c * hw + p] / nb;
            acc += d * d;
        }
        return acc;
    });
    return s / double(co * hw);
}

inline std::vector<double> mean_pool2(const std::vector<double>& x, std::size_t c, std::size_t h,
                                      std::size_t w) {
    const std::size_t oh = h / 2, ow = w / 2;
    std::vector<double> y(c * oh * ow);
    kern::sum_pool(x.data(), y.data(), c, h, w, 2);
    for (auto& v : y) v *= 0.25;
    return y;
}

} // namespace detail

template <class T>
double lpips_lite(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw ShapeError("lpips_lite: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    if (a.ndim() != 3) throw ShapeError("lpips_lite: want {C,H,W}, got " + shape_str(a.shape));
    std::size_t ci = a.shape[0], h = a.shape[1], w = a.shape[2];
    if (h < 4 || w < 4)
        throw ShapeError("lpips_lite: image " + std::to_string(h) + "x" + std::to_string(w) +
                         " below the 4x4 minimum");
    std::vector<double> xa(a.numel()), xb(b.numel());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        xa[i] = double(a.data[i]);
        xb[i] = double(b.data[i]);
    }
    const std::size_t widths[3] = {8, 16, 32};
    double total = 0.0;
    for (std::size_t stage = 0; stage < 3; ++stage) {
        const std::size_t co = widths[stage];
        const auto filt = detail::lpips_filter(stage, ci, co);
        auto fa = detail::lpips_features(xa, ci, h, w, co, filt);
        auto fb = detail::lpips_features(xb, ci, h, w, co, filt);
        total += detail::lpips_stage_distance(fa, fb, co, h, w);
        if (stage + 1 < 3) {
            xa = detail::mean_pool2(fa, co, h, w);
            xb = detail::mean_pool2(fb, co, h, w);
            ci = co;
            h /= 2;
            w /= 2;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

struct MetricsReport {
    double mse = 0.0;
    double ssim = 0.0;
    double psnr = 0.0; // dB; +inf when mse is 0
    double lpips_lite = 0.0;
    std::string image_id;
    long iteration = 0;
};

template <class T>
MetricsReport evaluate(const Tensor<T>& recon, const Tensor<T>& target,
                       const std::string& image_id = {}, long iteration = 0) {
    if (!recon.same_shape(target))
        throw ShapeError("evaluate: shape mismatch " + shape_str(recon.shape) + " vs " +
                         shape_str(target.shape));
    const Tensor<T> r = clip01(recon);
    const Tensor<T> t = clip01(target);
    MetricsReport rep;
    rep.image_id = image_id;
    rep.iteration = iteration;
    rep.mse = mse(r, t);
    rep.psnr = psnr_from_mse(rep.mse, 1.0);
    rep.ssim = ssim(r, t);
    rep.lpips_lite = lpips_lite(r, t);
    return rep;
}

} // namespace gleak::metrics

#endif
