#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "gleak/model.hpp"
#include "gleak/rng.hpp"

using namespace gleak;

namespace {

Tensor<double> rnd_img(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> t({c, h, w});
    for (auto& v : t.data) v = rng.uniform(0.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("lenet-style registry resolves shapes through the stride chain") {
    auto shapes = parameter_shapes<double>(registry_layers("dlg-lenet", 2), {3, 16, 16});
    // strides 2,2,1,1 with pad 2, kernel 5: 16 -> 8 -> 4 -> 4 -> 4
    using V = std::vector<std::size_t>;
    CHECK(shapes.at("L00.conv.w") == V{12, 3, 5, 5});
    CHECK(shapes.at("L02.conv.w") == V{12, 12, 5, 5});
    CHECK(shapes.at("L04.conv.w") == V{12, 12, 5, 5});
    CHECK(shapes.at("L06.conv.w") == V{12, 12, 5, 5});
    CHECK(shapes.at("L08.dense.w") == V{2, 12 * 4 * 4});
    CHECK(shapes.at("L08.dense.b") == V{2});

    auto lin = parameter_shapes<double>(registry_layers("linear", 4), {3, 8, 8});
    CHECK(lin.at("L00.dense.w") == V{4, 3 * 8 * 8});
    CHECK(lin.at("L00.dense.b") == V{4});
    CHECK_THROWS_AS((void)registry_layers("resnet", 2), ConfigError);
}

TEST_CASE("model init is seed-deterministic") {
    auto a = make_target_model<double>("dlg-lenet", 16, 16, 3, 2, 9);
    auto b = make_target_model<double>("dlg-lenet", 16, 16, 3, 2, 9);
    auto c = make_target_model<double>("dlg-lenet", 16, 16, 3, 2, 10);
    bool all_equal = true, any_diff = false;
    for (const auto& [name, t] : a.weights) {
        all_equal = all_equal && std::memcmp(t.data.data(), b.weights.at(name).data.data(),
                                             t.numel() * sizeof(double)) == 0;
        any_diff = any_diff || std::memcmp(t.data.data(), c.weights.at(name).data.data(),
                                           t.numel() * sizeof(double)) != 0;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("linear model forward is the plain affine map") {
    auto m = make_target_model<double>("linear", 4, 4, 3, 3, 1);
    auto& W = m.weights.at("L00.dense.w");
    auto& bvec = m.weights.at("L00.dense.b");
    auto x = rnd_img(3, 4, 4, 2);
    auto logits = forward(m, x);
    REQUIRE(logits.numel() == 3);
    for (std::size_t r = 0; r < 3; ++r) {
        long double s = bvec.data[r];
        for (std::size_t i = 0; i < 48; ++i) s += (long double)W.data[r * 48 + i] * x.data[i];
        CHECK(logits.data[r] == doctest::Approx(double(s)).epsilon(1e-12));
    }
}

TEST_CASE("zero weights force the uniform-softmax loss ln(classes)") {
    for (std::size_t classes : {std::size_t(2), std::size_t(4)}) {
        auto m = make_target_model<double>("dlg-lenet", 16, 16, 3, classes, 3);
        for (auto& [name, t] : m.weights)
            for (auto& v : t.data) v = 0.0;
        LabeledExample<double> ex{rnd_img(3, 16, 16, 4), 1};
        CHECK(loss(m, ex) == doctest::Approx(std::log(double(classes))).epsilon(1e-12));
    }
}

TEST_CASE("analytic loss gradients pass finite-difference probing") {
    for (const char* arch : {"linear", "dlg-lenet"}) {
        auto m = make_target_model<double>(arch, 16, 16, 3, 2, 5);
        LabeledExample<double> ex{rnd_img(3, 16, 16, 6), 1};
        auto f = loss_as_function(m, ex);
        std::size_t total = 0;
        for (const auto& [name, shape] : parameter_shapes<double>(m.layers, m.input_chw)) {
            std::size_t n = 1;
            for (auto d : shape) n *= d;
            total += n;
        }
        auto probes = sample_probe_indices(total, 24, 11);
        const double err = grad_check(f, m.weights, probes, 1e-5);
        INFO(arch);
        CHECK(err <= 1e-3);
        CHECK(err < 1e-5); // comfortably below the gate in practice
    }
}

TEST_CASE("linear-model gradient has the closed softmax outer-product form") {
    auto m = make_target_model<double>("linear", 8, 8, 3, 2, 7);
    LabeledExample<double> ex{rnd_img(3, 8, 8, 8), 0};
    auto g = compute_gradient(m, ex);
    auto parts = unflatten_gradients(g);

    // p = softmax(Wx + b); dW = (p - onehot) x^T, db = p - onehot
    auto logits = forward(m, ex.image);
    double mx = std::max(logits.data[0], logits.data[1]);
    double z = std::exp(logits.data[0] - mx) + std::exp(logits.data[1] - mx);
    double p0 = std::exp(logits.data[0] - mx) / z;
    double p1 = std::exp(logits.data[1] - mx) / z;
    const double d0 = p0 - 1.0, d1 = p1;

    const auto& dW = parts.at("L00.dense.w");
    const auto& db = parts.at("L00.dense.b");
    CHECK(db.data[0] == doctest::Approx(d0).epsilon(1e-10));
    CHECK(db.data[1] == doctest::Approx(d1).epsilon(1e-10));
    for (std::size_t i = 0; i < 192; i += 17) {
        CHECK(dW.data[i] == doctest::Approx(d0 * ex.image.data[i]).epsilon(1e-9));
        CHECK(dW.data[192 + i] == doctest::Approx(d1 * ex.image.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("swapping the label flips the linear gradient structure") {
    auto m = make_target_model<double>("linear", 8, 8, 3, 2, 7);
    auto img = rnd_img(3, 8, 8, 9);
    auto g0 = compute_gradient(m, {img, 0});
    auto g1 = compute_gradient(m, {img, 1});
    CHECK(squared_l2_distance(g0, g1) > 0.1);
}

TEST_CASE("mean gradient equals the average of per-example gradients") {
    auto m = make_target_model<double>("dlg-lenet", 16, 16, 3, 2, 13);
    std::vector<LabeledExample<double>> exs = {
        {rnd_img(3, 16, 16, 21), 0}, {rnd_img(3, 16, 16, 22), 1}, {rnd_img(3, 16, 16, 23), 0}};
    auto mean = mean_gradient(m, exs);
    GradientVector<double> acc = compute_gradient(m, exs[0]);
    for (std::size_t k = 1; k < exs.size(); ++k) {
        auto gk = compute_gradient(m, exs[k]);
        for (std::size_t i = 0; i < acc.size(); ++i) acc.values[i] += gk.values[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
        const double want = acc.values[i] / 3.0;
        CHECK(std::abs(mean.values[i] - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("gradient layout matches the declared parameter shapes") {
    auto m = make_target_model<double>("dlg-lenet", 16, 16, 3, 2, 15);
    auto g = compute_gradient(m, {rnd_img(3, 16, 16, 16), 1});
    auto shapes = parameter_shapes<double>(m.layers, m.input_chw);
    REQUIRE(g.layout.size() == shapes.size());
    std::size_t total = 0;
    auto it = shapes.begin();
    for (const auto& e : g.layout) {
        CHECK(e.name == it->first);
        CHECK(e.shape == it->second);
        std::size_t n = 1;
        for (auto d : e.shape) n *= d;
        total += n;
        ++it;
    }
    CHECK(g.size() == total);
}

TEST_CASE("bad labels and non-finite weights are rejected") {
    auto m = make_target_model<double>("linear", 8, 8, 3, 2, 17);
    CHECK_THROWS_AS((void)compute_gradient(m, {rnd_img(3, 8, 8, 18), 2}), LabelError);
    m.weights.at("L00.dense.w").data[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS((void)compute_gradient(m, {rnd_img(3, 8, 8, 19), 0}), NonFiniteGradient);
}

TEST_CASE("target model save and load round trip bitwise") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "gleak_model_rt";
    fs::create_directories(dir);
    const std::string path = (dir / "m.bin").string();

    auto m = make_target_model<double>("dlg-lenet", 16, 16, 3, 2, 19);
    save_target_model(m, path);
    auto back = load_target_model<double>(path);
    CHECK(back.arch_id == m.arch_id);
    CHECK(back.input_chw == m.input_chw);
    CHECK(back.num_classes == m.num_classes);
    REQUIRE(back.weights.size() == m.weights.size());
    for (const auto& [name, t] : m.weights) {
        CHECK(std::memcmp(t.data.data(), back.weights.at(name).data.data(),
                          t.numel() * sizeof(double)) == 0);
    }
    CHECK_THROWS_AS((void)load_target_model<double>((dir / "missing.bin").string()), IoError);
    fs::remove_all(dir);
}
