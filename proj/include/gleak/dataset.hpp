#ifndef GLEAK_DATASET_HPP
#define GLEAK_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/model.hpp"
#include "gleak/png_io.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

// Toy data. Two classes of seeded colored shapes on a dark background:
// class 0 a warm disc, class 1 a cool rectangle, both antialiased. Labels
// alternate by index so any n >= 2 contains both classes, and the color
// split keeps the class-conditional pixel means well apart.

namespace gleak {

namespace dataset_detail {

inline double coverage_1d(double lo, double hi, double p) {
    // overlap of [p, p+1] with [lo, hi], a box filter across the edge
    const double a = std::max(lo, p), b = std::min(hi, p + 1.0);
    return b > a ? b - a : 0.0;
}

} // namespace dataset_detail

template <class T>
std::vector<LabeledExample<T>> make_synthetic_dataset(std::size_t n, std::size_t height,
                                                      std::size_t width, std::size_t channels,
                                                      std::uint64_t seed) {
    if (n < 1) throw ConfigError("make_synthetic_dataset: need n >= 1");
    if (channels != 3) throw ConfigError("make_synthetic_dataset: channels must be 3");
    if (height < 8 || width < 8)
        throw ConfigError("make_synthetic_dataset: image smaller than 8x8 is degenerate");

    std::vector<LabeledExample<T>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(seed, {stream::dataset, std::uint64_t(i)});
        const std::size_t label = i % 2;

        const double cx = rng.uniform(0.32, 0.68) * double(width);
        const double cy = rng.uniform(0.32, 0.68) * double(height);
        const double half = rng.uniform(0.20, 0.32) * double(std::min(height, width));
        double fg[3], bg[3];
        if (label == 0) { // warm disc
            fg[0] = rng.uniform(0.75, 1.0);
            fg[1] = rng.uniform(0.20, 0.45);
            fg[2] = rng.uniform(0.00, 0.15);
        } else { // cool rectangle
            fg[0] = rng.uniform(0.00, 0.15);
            fg[1] = rng.uniform(0.30, 0.55);
            fg[2] = rng.uniform(0.75, 1.0);
        }
        const double shade = rng.uniform(0.05, 0.15);
        for (int c = 0; c < 3; ++c) bg[c] = shade + rng.uniform(-0.02, 0.02);
        const double aspect = rng.uniform(0.7, 1.3);

        LabeledExample<T> ex;
        ex.label = label;
        ex.image = Tensor<T>({3, height, width});
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x) {
                double cov;
                if (label == 0) {
                    const double dx = double(x) + 0.5 - cx;
                    const double dy = double(y) + 0.5 - cy;
                    const double dist = std::sqrt(dx * dx + dy * dy);
                    cov = std::clamp(half - dist + 0.5, 0.0, 1.0);
                } else {
                    const double hx = half * aspect, hy = half / aspect;
                    cov = dataset_detail::coverage_1d(cx - hx, cx + hx, double(x)) *
                          dataset_detail::coverage_1d(cy - hy, cy + hy, double(y));
                }
                for (std::size_t c = 0; c < 3; ++c)
                    ex.image.at3(c, y, x) = T(bg[c] + cov * (fg[c] - bg[c]));
            }
        out.push_back(std::move(ex));
    }
    return out;
}

// Per-class mean pixel value, max channel gap. The dataset tests use this to
// confirm the two classes are actually separable.
template <class T>
double class_mean_gap(const std::vector<LabeledExample<T>>& exs) {
    double sum[2][3] = {{0, 0, 0}, {0, 0, 0}};
    std::size_t cnt[2] = {0, 0};
    for (const auto& ex : exs) {
        if (ex.label > 1) continue;
        const std::size_t hw = ex.image.shape[1] * ex.image.shape[2];
        for (std::size_t c = 0; c < 3; ++c) {
            double s = 0;
            for (std::size_t i = 0; i < hw; ++i) s += double(ex.image.data[c * hw + i]);
            sum[ex.label][c] += s / double(hw);
        }
        ++cnt[ex.label];
    }
    if (!cnt[0] || !cnt[1]) return 0.0;
    double gap = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
        gap = std::max(gap, std::abs(sum[0][c] / double(cnt[0]) - sum[1][c] / double(cnt[1])));
    return gap;
}

template <class T>
void save_image_folder(const std::string& dir, const std::vector<LabeledExample<T>>& exs) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<std::size_t> counter;
    for (const auto& ex : exs) {
        if (ex.label >= counter.size()) counter.resize(ex.label + 1, 0);
        fs::path cls = fs::path(dir) / std::to_string(ex.label);
        fs::create_directories(cls);
        char name[32];
        std::snprintf(name, sizeof name, "img_%04zu.png", counter[ex.label]++);
        pngio::write_image(std::string((cls / name).string()), ex.image);
    }
}

template <class T>
std::vector<LabeledExample<T>> load_image_folder(const std::string& path, std::size_t height,
                                                 std::size_t width) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw IngestError("'" + path + "' is not a directory");

    std::vector<fs::path> classes;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory()) classes.push_back(e.path());
    std::sort(classes.begin(), classes.end());

    std::vector<LabeledExample<T>> out;
    for (const auto& cls : classes) {
        const std::string name = cls.filename().string();
        std::size_t label = 0;
        try {
            std::size_t pos = 0;
            label = std::stoul(name, &pos);
            if (pos != name.size()) throw std::invalid_argument(name);
        } catch (const std::exception&) {
            throw IngestError("class directory '" + name + "' is not an integer label");
        }
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(cls))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            Tensor<T> img = pngio::read_image<T>(f.string());
            if (img.shape[1] != height || img.shape[2] != width)
                throw IngestError("'" + f.string() + "': got " + shape_str(img.shape) +
                                  ", expected {3," + std::to_string(height) + "," +
                                  std::to_string(width) + "}");
            out.push_back({std::move(img), label});
        }
    }
    if (out.empty()) throw IngestError("no class-labeled png files under '" + path + "'");
    return out;
}

} // namespace gleak

#endif
