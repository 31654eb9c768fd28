#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "gleak/gradient.hpp"
#include "gleak/rng.hpp"

using namespace gleak;

namespace {

GradientVector<double> gv(std::initializer_list<double> vals) {
    GradientVector<double> g;
    g.values.assign(vals);
    g.layout = {{"p", {g.values.size()}}};
    return g;
}

GradientVector<double> rnd_gv(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    GradientVector<double> g;
    g.values.resize(n);
    for (auto& v : g.values) v = rng.uniform(-1.0, 1.0);
    g.layout = {{"p", {n}}};
    return g;
}

} // namespace

TEST_CASE("splitmix stream derivation separates named streams") {
    CHECK(derive_seed(1, {stream::model_init}) != derive_seed(1, {stream::dataset}));
    CHECK(derive_seed(1, {stream::dataset, 0}) != derive_seed(1, {stream::dataset, 1}));
    CHECK(derive_seed(1, {stream::dataset, 0}) == derive_seed(1, {stream::dataset, 0}));
    CHECK(derive_seed(1, {stream::dataset}) != derive_seed(2, {stream::dataset}));
}

TEST_CASE("rng draws are deterministic and in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        const double u = a.uniform();
        CHECK(u == b.uniform());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    Rng g(7);
    double mean = 0, var = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = g.gaussian();
        mean += x;
        var += x * x;
    }
    mean /= n;
    var = var / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("flatten and unflatten round trip a weight map") {
    std::map<std::string, Tensor<double>> m;
    Rng rng(5);
    m["a.w"] = Tensor<double>({2, 3});
    m["b.w"] = Tensor<double>({4});
    m["c.w"] = Tensor<double>({1, 2, 2});
    for (auto& [k, t] : m)
        for (auto& v : t.data) v = rng.uniform(-2.0, 2.0);

    auto flat = flatten_gradients(m);
    CHECK(flat.size() == 2 * 3 + 4 + 4);
    CHECK(flat.layout.size() == 3);
    CHECK(flat.layout[0].name == "a.w"); // canonical map order

    auto back = unflatten_gradients(flat);
    REQUIRE(back.size() == m.size());
    for (const auto& [k, t] : m) {
        REQUIRE(back.count(k) == 1);
        CHECK(back.at(k).shape == t.shape);
        CHECK(std::memcmp(back.at(k).data.data(), t.data.data(),
                          t.numel() * sizeof(double)) == 0);
    }
}

TEST_CASE("cosine distance pinned examples") {
    CHECK(cosine_distance(gv({1, 0}), gv({0, 1})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_distance(gv({1, 2, 3}), gv({2, 4, 6})) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cosine_distance(gv({1, 1}), gv({-1, -1})) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_THROWS_AS((void)cosine_distance(gv({0, 0}), gv({1, 0})), ZeroNormGradient);
    CHECK_THROWS_AS((void)cosine_distance(gv({1, 0}), gv({0, 0})), ZeroNormGradient);

    GradientVector<double> other = gv({1, 0, 0});
    other.layout = {{"q", {3}}};
    GradientVector<double> three = gv({0, 1, 0});
    CHECK_THROWS_AS((void)cosine_distance(three, other), LayoutMismatch);
}

TEST_CASE("cosine distance is scale invariant to a few ulp") {
    for (std::uint64_t s = 1; s <= 20; ++s) {
        auto a = rnd_gv(257, 1000 + s);
        auto b = rnd_gv(257, 2000 + s);
        const double base = cosine_distance(a, b);
        for (double c : {1e-3, 0.1, 7.0, 1e4}) {
            auto ac = a;
            for (auto& v : ac.values) v *= c;
            const double got = cosine_distance(ac, b);
            CHECK(std::abs(got - base) <=
                  8 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base)));
        }
    }
}

TEST_CASE("squared l2 distance examples") {
    CHECK(squared_l2_distance(gv({1, 2}), gv({1, 2})) == 0.0);
    CHECK(squared_l2_distance(gv({1, 2}), gv({3, 0})) == doctest::Approx(8.0).epsilon(1e-15));
    // scaling changes it, unlike the cosine
    auto a = rnd_gv(64, 9001), b = rnd_gv(64, 9002);
    auto a2 = a;
    for (auto& v : a2.values) v *= 2.0;
    CHECK(squared_l2_distance(a, b) != squared_l2_distance(a2, b));
}

TEST_CASE("gradient noise is seeded, zero-mean, variance-matched") {
    auto g = rnd_gv(20000, 4242);
    for (NoiseFamily fam : {NoiseFamily::gaussian, NoiseFamily::laplacian}) {
        NoiseSpec spec{fam, 1e-2, 0.0, 77};
        auto n1 = add_noise(g, spec);
        auto n2 = add_noise(g, spec);
        CHECK(std::memcmp(n1.values.data(), n2.values.data(),
                          n1.size() * sizeof(double)) == 0);
        spec.seed = 78;
        auto n3 = add_noise(g, spec);
        CHECK(std::memcmp(n1.values.data(), n3.values.data(),
                          n1.size() * sizeof(double)) != 0);

        double mean = 0, var = 0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double d = n1.values[i] - g.values[i];
            mean += d;
            var += d * d;
        }
        mean /= double(g.size());
        var = var / double(g.size()) - mean * mean;
        CHECK(std::abs(mean) < 0.005);
        CHECK(var == doctest::Approx(1e-2).epsilon(0.08));
    }
    NoiseSpec zero{NoiseFamily::gaussian, 0.0, 0.0, 5};
    auto same = add_noise(g, zero);
    CHECK(std::memcmp(same.values.data(), g.values.data(), g.size() * sizeof(double)) == 0);
    CHECK_THROWS_AS((void)noise_family_from_string("cauchy"), UnsupportedNoise);
}

TEST_CASE("canonical unit direction ignores positive rescaling bitwise") {
    auto g = rnd_gv(501, 31337);
    auto u = canonical_unit_direction(g);
    double nn = 0;
    for (double v : u.values) nn += v * v;
    CHECK(std::sqrt(nn) == doctest::Approx(1.0).epsilon(1e-6)); // binary32 rounding floor

    for (double c : {1e-6, 1e-2, 3.0, 1e5}) {
        auto gc = g;
        for (auto& v : gc.values) v *= c;
        auto uc = canonical_unit_direction(gc);
        CHECK(std::memcmp(u.values.data(), uc.values.data(), u.size() * sizeof(double)) == 0);
    }
    CHECK_THROWS_AS((void)canonical_unit_direction(gv({0, 0, 0})), ZeroNormGradient);
}

TEST_CASE("probe index sampling is deterministic, unique, sorted") {
    auto a = sample_probe_indices(1000, 16, 5);
    auto b = sample_probe_indices(1000, 16, 5);
    CHECK(a == b);
    CHECK(a.size() == 16);
    for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1] < a[i]);
    for (std::size_t i : a) CHECK(i < 1000);
    auto all = sample_probe_indices(10, 50, 5);
    CHECK(all.size() == 10);
}

TEST_CASE("grad_check accepts a correct gradient and flags a wrong one") {
    // f(p) = sum(p^3) + dot(p, c)
    Rng rng(8);
    std::map<std::string, Tensor<double>> params;
    params["p"] = Tensor<double>({10});
    for (auto& v : params["p"].data) v = rng.uniform(-1.0, 1.0);
    Tensor<double> c({10});
    for (auto& v : c.data) v = rng.uniform(-1.0, 1.0);

    DiffScalarFn<double> f;
    f.value = [c](const std::map<std::string, Tensor<double>>& ps) {
        double s = 0;
        const auto& p = ps.at("p");
        for (std::size_t i = 0; i < p.numel(); ++i)
            s += p.data[i] * p.data[i] * p.data[i] + p.data[i] * c.data[i];
        return s;
    };
    f.gradient = [c](const std::map<std::string, Tensor<double>>& ps) {
        const auto& p = ps.at("p");
        std::map<std::string, Tensor<double>> g;
        g["p"] = Tensor<double>({10});
        for (std::size_t i = 0; i < p.numel(); ++i)
            g["p"].data[i] = 3.0 * p.data[i] * p.data[i] + c.data[i];
        return flatten_gradients(g);
    };

    auto probes = sample_probe_indices(10, 8, 3);
    CHECK(grad_check(f, params, probes, 1e-6) <= 1e-9);

    auto broken = f;
    broken.gradient = [c, f](const std::map<std::string, Tensor<double>>& ps) {
        auto g = f.gradient(ps);
        g.values[4] += 0.5;
        return g;
    };
    CHECK(grad_check(broken, params, probes, 1e-6) > 1e-2);
}
