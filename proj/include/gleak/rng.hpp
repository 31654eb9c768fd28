#ifndef GLEAK_RNG_HPP
#define GLEAK_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace gleak {

// splitmix64 step; used to derive stream seeds so that (master_seed, purpose)
// pairs give uncorrelated, platform-independent starting points.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d49b3b8f6fcd1fULL;
    return z ^ (z >> 31);
}

// Fold a master seed with any number of tags into one derived seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(master);
    for (std::uint64_t t : tags) s = splitmix64(s ^ t);
    return s;
}

// Stream tags for the per-purpose RNG streams. Values are arbitrary but frozen:
// changing one changes every derived artifact.
namespace stream {
inline constexpr std::uint64_t model_init   = 0x11ULL;
inline constexpr std::uint64_t diff_init    = 0x22ULL;
inline constexpr std::uint64_t diff_train   = 0x33ULL;
inline constexpr std::uint64_t dataset      = 0x44ULL;
inline constexpr std::uint64_t latent       = 0x55ULL;
inline constexpr std::uint64_t sampler      = 0x66ULL;
inline constexpr std::uint64_t noise        = 0x77ULL;
inline constexpr std::uint64_t dummy_init   = 0x88ULL;
inline constexpr std::uint64_t probe        = 0x99ULL;
inline constexpr std::uint64_t lpips        = 0xAAULL;
} // namespace stream

// Deterministic generator with the handful of distributions the project needs.
// Gaussian avoids std::normal_distribution on purpose: its algorithm is
// implementation-defined, while Box-Muller below is pinned by this code.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}
    Rng(std::uint64_t master, std::initializer_list<std::uint64_t> tags)
        : gen_(derive_seed(master, tags)) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return double(gen_() >> 11) * 0x1.0p-53;
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t uniform_index(std::uint64_t n) { return gen_() % n; }

    // standard normal via Box-Muller, pair cached
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

    // Laplace(0, b) via inverse CDF
    double laplacian(double b) {
        double u = uniform() - 0.5;
        double s = (u < 0.0) ? -1.0 : 1.0;
        double au = u < 0.0 ? -u : u;
        // clamp away from 0.5 so log never sees 0
        if (au >= 0.5) au = 0.49999999999999994;
        return -b * s * std::log1p(-2.0 * au);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace gleak

#endif
