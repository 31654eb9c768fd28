#ifndef GLEAK_GRADIENT_HPP
#define GLEAK_GRADIENT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/kernels.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

struct LayoutEntry {
    std::string name;
    std::vector<std::size_t> shape;
    bool operator==(const LayoutEntry&) const = default;
};

// Flattened per-parameter gradients in canonical (lexicographic-by-name)
// order. Two vectors are comparable only when their layouts agree.
template <class T>
struct GradientVector {
    std::vector<T> values;
    std::vector<LayoutEntry> layout;

    std::size_t size() const { return values.size(); }
    bool same_layout(const GradientVector& o) const { return layout == o.layout; }
};

template <class T>
GradientVector<T> flatten_gradients(const std::map<std::string, Tensor<T>>& grads) {
    GradientVector<T> out;
    std::size_t total = 0;
    for (const auto& [name, g] : grads) total += g.numel();
    out.values.reserve(total);
    for (const auto& [name, g] : grads) {
        for (const T& v : g.data) {
            if (!std::isfinite(double(v)))
                throw NonFiniteGradient("flatten_gradients: non-finite entry in parameter '" + name + "'");
            out.values.push_back(v);
        }
        out.layout.push_back({name, g.shape});
    }
    return out;
}

template <class T>
std::map<std::string, Tensor<T>> unflatten_gradients(const GradientVector<T>& gv) {
    std::map<std::string, Tensor<T>> out;
    std::size_t off = 0;
    for (const auto& entry : gv.layout) {
        Tensor<T> t(entry.shape);
        if (off + t.numel() > gv.values.size())
            throw LayoutMismatch("unflatten_gradients: layout longer than value vector");
        std::copy(gv.values.begin() + off, gv.values.begin() + off + t.numel(), t.data.begin());
        off += t.numel();
        out.emplace(entry.name, std::move(t));
    }
    if (off != gv.values.size())
        throw LayoutMismatch("unflatten_gradients: value vector longer than layout");
    return out;
}

template <class T>
void require_same_layout(const GradientVector<T>& a, const GradientVector<T>& b, const char* op) {
    if (!a.same_layout(b)) throw LayoutMismatch(std::string(op) + ": gradient layouts differ");
}

template <class T>
double gradient_norm(const GradientVector<T>& g) {
    T d = kern::dot(g.values.data(), g.values.data(), g.size(), kern::use_omp(g.size()));
    return std::sqrt(double(d));
}

// 1 - <g,h> / (|g| |h|), clamped into [0, 2]. The exact floating-point
// sequence here is shared with the attack-loss graph so that traces can be
// recomputed offline bit-for-bit.
template <class T>
double cosine_distance(const GradientVector<T>& g, const GradientVector<T>& h) {
    require_same_layout(g, h, "cosine_distance");
    const bool par = kern::use_omp(g.size());
    T d = kern::dot(g.values.data(), h.values.data(), g.size(), par);
    T ng = kern::dot(g.values.data(), g.values.data(), g.size(), par);
    T nh = kern::dot(h.values.data(), h.values.data(), h.size(), par);
    if (ng <= T(0)) throw ZeroNormGradient("cosine_distance: first argument has zero norm");
    if (nh <= T(0)) throw ZeroNormGradient("cosine_distance: second argument has zero norm");
    T denom = std::sqrt(ng) * std::sqrt(nh);
    double r = 1.0 - double(d / denom);
    if (r < 0.0) r = 0.0;
    if (r > 2.0) r = 2.0;
    return r;
}

template <class T>
double squared_l2_distance(const GradientVector<T>& g, const GradientVector<T>& h) {
    require_same_layout(g, h, "squared_l2_distance");
    return double(kern::squared_diff_sum(g.values.data(), h.values.data(), g.size(),
                                         kern::use_omp(g.size())));
}

// ---------------------------------------------------------------------------
// Defense noise
// ---------------------------------------------------------------------------

enum class NoiseFamily { gaussian, laplacian };

inline NoiseFamily noise_family_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseFamily::gaussian;
    if (s == "laplacian") return NoiseFamily::laplacian;
    throw UnsupportedNoise("unknown noise family '" + s + "'");
}

inline const char* to_string(NoiseFamily f) {
    return f == NoiseFamily::gaussian ? "gaussian" : "laplacian";
}

struct NoiseSpec {
    NoiseFamily family = NoiseFamily::gaussian;
    double variance = 0.0;
    double mean = 0.0;  // fixed 0 by contract, kept explicit
    std::uint64_t seed = 0;
};

// i.i.d. per-element noise added once to a leaked gradient. Pure in
// (g, spec): same seed, same output.
template <class T>
GradientVector<T> add_noise(const GradientVector<T>& g, const NoiseSpec& spec) {
    if (spec.variance < 0.0) throw UnsupportedNoise("add_noise: negative variance");
    GradientVector<T> out = g;
    if (spec.variance == 0.0) return out;
    Rng rng(spec.seed);
    if (spec.family == NoiseFamily::gaussian) {
        const double sigma = std::sqrt(spec.variance);
        for (auto& v : out.values) v = T(double(v) + spec.mean + sigma * rng.gaussian());
    } else {
        const double b = std::sqrt(spec.variance / 2.0);  // Var = 2 b^2
        for (auto& v : out.values) v = T(double(v) + spec.mean + rng.laplacian(b));
    }
    return out;
}

// Unit direction of g with the norm taken in extended precision and every
// component rounded through binary32. Any positive rescaling of g maps to the
// same direction bit-for-bit (up to an astronomically unlikely rounding-
// boundary straddle), which is what makes the cosine attack's scale
// invariance exact instead of approximate.
template <class T>
GradientVector<T> canonical_unit_direction(const GradientVector<T>& g) {
    long double acc = 0.0L;
    for (const T& v : g.values) acc += (long double)v * (long double)v;
    if (acc <= 0.0L) throw ZeroNormGradient("canonical_unit_direction: zero norm");
    const long double norm = sqrtl(acc);
    GradientVector<T> out = g;
    for (auto& v : out.values) v = T(float((long double)v / norm));
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

// A scalar function bundled with its claimed analytic gradient; grad_check
// probes the claim with central differences.
template <class T>
struct DiffScalarFn {
    std::function<double(const std::map<std::string, Tensor<T>>&)> value;
    std::function<GradientVector<T>(const std::map<std::string, Tensor<T>>&)> gradient;
};

inline std::vector<std::size_t> sample_probe_indices(std::size_t total, std::size_t count,
                                                     std::uint64_t seed) {
    std::vector<std::size_t> idx;
    if (count >= total) {
        idx.resize(total);
        for (std::size_t i = 0; i < total; ++i) idx[i] = i;
        return idx;
    }
    Rng rng(seed, {stream::probe});
    while (idx.size() < count) {
        std::size_t i = rng.uniform_index(total);
        if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <class T>
double grad_check(const DiffScalarFn<T>& f, const std::map<std::string, Tensor<T>>& params,
                  std::span<const std::size_t> probe_indices, double step) {
    if (step <= 0.0) throw ConfigError("grad_check: step must be positive");
    GradientVector<T> analytic = f.gradient(params);

    // flat index -> (parameter name, offset)
    struct Block {
        std::string name;
        std::size_t begin, end;
    };
    std::vector<Block> blocks;
    std::size_t off = 0;
    for (const auto& e : analytic.layout) {
        std::size_t n = Tensor<T>::count(e.shape);
        blocks.push_back({e.name, off, off + n});
        off += n;
    }
    if (off != analytic.size())
        throw LayoutMismatch("grad_check: analytic gradient layout inconsistent");

    double max_rel = 0.0;
    for (std::size_t flat : probe_indices) {
        if (flat >= analytic.size()) throw LayoutMismatch("grad_check: probe index out of range");
        auto bit = std::find_if(blocks.begin(), blocks.end(),
                                [&](const Block& b) { return flat < b.end; });
        const std::string& pname = bit->name;
        const std::size_t local = flat - bit->begin;

        auto perturbed = [&](double delta) {
            std::map<std::string, Tensor<T>> p = params;
            auto it = p.find(pname);
            if (it == p.end()) throw LayoutMismatch("grad_check: parameter '" + pname + "' missing");
            it->second[local] = T(double(it->second[local]) + delta);
            return f.value(p);
        };
        const double fp = perturbed(step);
        const double fm = perturbed(-step);
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = double(analytic.values[flat]);
        if (!std::isfinite(numeric) || !std::isfinite(a))
            throw NonFiniteGradient("grad_check: non-finite value at probe");
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }
    return max_rel;
}

} // namespace gleak

#endif
