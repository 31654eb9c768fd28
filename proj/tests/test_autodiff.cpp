#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gleak/graph.hpp"
#include "gleak/rng.hpp"

using namespace gleak;
using ag::NodePtr;

namespace {

Tensor<double> rnd_t(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Rng rng(seed);
    Tensor<double> t(shape);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// central-difference gradient of a scalar graph builder at x
std::vector<double> numeric_grad(const std::function<double(const Tensor<double>&)>& f,
                                 Tensor<double> x, double h = 1e-6) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double fp = f(x);
        x.data[i] = keep - h;
        const double fm = f(x);
        x.data[i] = keep;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

// analytic gradient of the same builder through the graph
std::vector<double> graph_grad(
    const std::function<NodePtr<double>(const NodePtr<double>&)>& build,
    const Tensor<double>& x) {
    auto xp = ag::param(x);
    auto root = build(xp);
    auto grads = ag::backward(root);
    return ag::grad_of(grads, xp)->value.data;
}

void check_op(const char* name,
              const std::function<NodePtr<double>(const NodePtr<double>&)>& build,
              const Tensor<double>& x, double tol = 2e-6) {
    INFO(name);
    auto ana = graph_grad(build, x);
    auto num = numeric_grad(
        [&](const Tensor<double>& xv) {
            auto xp = ag::constant(xv);
            return double(build(xp)->value[0]);
        },
        x);
    REQUIRE(ana.size() == num.size());
    for (std::size_t i = 0; i < ana.size(); ++i) {
        const double scale = std::max({1.0, std::abs(ana[i]), std::abs(num[i])});
        CHECK(std::abs(ana[i] - num[i]) / scale <= tol);
    }
}

} // namespace

// constant() parents are filtered out of the tape; build(constant) keeps the
// forward value identical, which numeric_grad exploits above.

TEST_CASE("first derivatives of every scalar-reducible op") {
    auto x = rnd_t({12}, 5, 0.2, 1.7); // positive, also safe for log/sqrt/div
    auto y = ag::constant(rnd_t({12}, 6, 0.3, 1.1));

    check_op("sum(add)", [&](auto p) { return ag::sum_all(ag::add(p, y)); }, x);
    check_op("sum(sub)", [&](auto p) { return ag::sum_all(ag::sub(p, y)); }, x);
    check_op("sum(neg)", [&](auto p) { return ag::sum_all(ag::neg(p)); }, x);
    check_op("sum(mul)", [&](auto p) { return ag::sum_all(ag::mul(p, y)); }, x);
    check_op("sum(mul self)", [&](auto p) { return ag::sum_all(ag::mul(p, p)); }, x);
    check_op("sum(div num)", [&](auto p) { return ag::sum_all(ag::div(p, y)); }, x);
    check_op("sum(div den)", [&](auto p) { return ag::sum_all(ag::div(y, p)); }, x);
    check_op("sum(add_const)", [&](auto p) { return ag::sum_all(ag::add_const(p, 0.37)); }, x);
    check_op("sum(mul_const)", [&](auto p) { return ag::sum_all(ag::mul_const(p, -2.4)); }, x);
    check_op("sum(exp)", [&](auto p) { return ag::sum_all(ag::exp_(p)); }, x);
    check_op("sum(log)", [&](auto p) { return ag::sum_all(ag::log_(p)); }, x);
    check_op("sum(sqrt)", [&](auto p) { return ag::sum_all(ag::sqrt_(p)); }, x);
    check_op("sum(sigmoid)", [&](auto p) { return ag::sum_all(ag::sigmoid(p)); }, x);
    check_op("sum(silu)", [&](auto p) { return ag::sum_all(ag::silu(p)); }, x);
    check_op("dot", [&](auto p) { return ag::dot(p, y); }, x);
    check_op("dot self", [&](auto p) { return ag::dot(p, p); }, x);
    check_op("squared_distance", [&](auto p) { return ag::squared_distance(p, y); }, x);
    check_op("sum(scale)", [&](auto p) {
        return ag::sum_all(ag::scale(p, ag::scalar_const<double>(1.0 / 3)));
    }, x);
    check_op("scale factor", [&](auto p) {
        auto s = ag::sum_all(p);
        return ag::sum_all(ag::scale(y, s));
    }, x);
    check_op("sum(slice1)", [&](auto p) { return ag::sum_all(ag::slice1(p, 3, 5)); }, x);
    check_op("sum(pad1.mul)", [&](auto p) {
        auto padded = ag::pad1(p, 2, 20);
        return ag::dot(padded, ag::constant(rnd_t({20}, 7)));
    }, x);
    check_op("select1", [&](auto p) { return ag::select1(p, 4); }, x);
    check_op("sum(concat1)", [&](auto p) {
        std::vector<NodePtr<double>> parts{p, y, p};
        return ag::dot(ag::concat1(parts), ag::constant(rnd_t({36}, 8)));
    }, x);
    check_op("sum(reshape)", [&](auto p) {
        return ag::dot(ag::reshape(p, {3, 4}), ag::constant(rnd_t({3, 4}, 9)));
    }, x);
    check_op("scatter1", [&](auto p) {
        auto s = ag::select1(p, 2);
        return ag::dot(ag::scatter1(s, 5, 9), ag::constant(rnd_t({9}, 10)));
    }, x);
}

TEST_CASE("first derivatives of the structured ops") {
    auto img = rnd_t({2, 6, 6}, 21);
    auto w = rnd_t({3, 2, 3, 3}, 22);
    auto cw = ag::constant(w);
    check_op("conv2d wrt input", [&](auto p) {
        return ag::dot(ag::conv2d(p, cw, 1, 1),
                       ag::constant(rnd_t({3, 6, 6}, 23)));
    }, img);
    auto cimg = ag::constant(img);
    check_op("conv2d wrt kernel", [&](auto p) {
        return ag::dot(ag::conv2d(cimg, p, 1, 1),
                       ag::constant(rnd_t({3, 6, 6}, 24)));
    }, w);

    auto m = rnd_t({4, 6}, 25);
    auto v = rnd_t({6}, 26);
    check_op("matvec wrt m", [&](auto p) {
        return ag::dot(ag::matvec(p, ag::constant(v)), ag::constant(rnd_t({4}, 27)));
    }, m);
    check_op("matvec wrt v", [&](auto p) {
        return ag::dot(ag::matvec(ag::constant(m), p), ag::constant(rnd_t({4}, 28)));
    }, v);
    check_op("matvec_t wrt u", [&](auto p) {
        return ag::dot(ag::matvec_t(ag::constant(m), p), ag::constant(rnd_t({6}, 29)));
    }, rnd_t({4}, 30));
    check_op("outer wrt u", [&](auto p) {
        return ag::dot(ag::reshape(ag::outer_(p, ag::constant(v)), {24}),
                       ag::constant(rnd_t({24}, 31)));
    }, rnd_t({4}, 32));

    check_op("bias_add wrt bias", [&](auto p) {
        return ag::dot(ag::bias_add(cimg, p), ag::constant(rnd_t({2, 6, 6}, 33)));
    }, rnd_t({2}, 34));
    check_op("spatial_sum", [&](auto p) {
        return ag::dot(ag::spatial_sum(p), ag::constant(rnd_t({2}, 35)));
    }, img);
    check_op("broadcast_chw", [&](auto p) {
        return ag::dot(ag::broadcast_chw(p, 6, 6), ag::constant(rnd_t({2, 6, 6}, 36)));
    }, rnd_t({2}, 37));
    check_op("sum_pool", [&](auto p) {
        return ag::dot(ag::sum_pool(p, 2), ag::constant(rnd_t({2, 3, 3}, 38)));
    }, img);
    check_op("avg_pool", [&](auto p) {
        return ag::dot(ag::avg_pool(p, 2), ag::constant(rnd_t({2, 3, 3}, 39)));
    }, img);
    check_op("upsample", [&](auto p) {
        return ag::dot(ag::upsample(p, 2), ag::constant(rnd_t({2, 12, 12}, 40)));
    }, img);
    check_op("concat_ch a", [&](auto p) {
        return ag::dot(ag::concat_ch(p, cimg), ag::constant(rnd_t({4, 6, 6}, 41)));
    }, img);
    check_op("slice_ch", [&](auto p) {
        return ag::dot(ag::slice_ch(p, 1, 1), ag::constant(rnd_t({1, 6, 6}, 42)));
    }, img);
    check_op("pad_ch", [&](auto p) {
        return ag::dot(ag::pad_ch(p, 1, 4), ag::constant(rnd_t({4, 6, 6}, 43)));
    }, img);
}

TEST_CASE("softmax cross entropy value and gradient") {
    auto logits = rnd_t({4}, 51, -2.0, 2.0);
    const std::size_t label = 2;
    auto lp = ag::param(logits);
    auto loss = ag::softmax_cross_entropy(lp, label);

    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double z = 0;
    for (double v : logits.data) z += std::exp(v - mx);
    const double want = -(logits.data[label] - mx - std::log(z));
    CHECK(double(loss->value[0]) == doctest::Approx(want).epsilon(1e-12));

    auto grads = ag::backward(loss);
    auto g = ag::grad_of(grads, lp)->value;
    for (std::size_t i = 0; i < 4; ++i) {
        const double p = std::exp(logits.data[i] - mx) / z;
        const double want_g = p - (i == label ? 1.0 : 0.0);
        CHECK(g.data[i] == doctest::Approx(want_g).epsilon(1e-10));
    }
}

TEST_CASE("gradients of gradients match finite differences of gradients") {
    // phi(x) = <grad_x f(x), c>; check d phi/dx against numeric differentiation
    // of the analytic gradient. This is the double-backprop contract the
    // attack loss relies on.
    auto x0 = rnd_t({6}, 61, 0.3, 1.4);
    auto c = rnd_t({6}, 62);

    auto grad_f = [&](const Tensor<double>& xv) {
        auto xp = ag::param(xv);
        auto w = ag::constant(rnd_t({6}, 63));
        // f = sum(sigmoid(x*w)^2) + dot(x, x) * sum(sqrt(x))
        auto s = ag::sigmoid(ag::mul(xp, w));
        auto f = ag::add(ag::sum_all(ag::mul(s, s)),
                         ag::mul(ag::dot(xp, xp), ag::sum_all(ag::sqrt_(xp))));
        auto grads = ag::backward(f);
        return ag::grad_of(grads, xp);
    };

    // analytic: differentiate phi through the rebuilt gradient graph
    auto xp = ag::param(x0);
    auto w = ag::constant(rnd_t({6}, 63));
    auto s = ag::sigmoid(ag::mul(xp, w));
    auto f = ag::add(ag::sum_all(ag::mul(s, s)),
                     ag::mul(ag::dot(xp, xp), ag::sum_all(ag::sqrt_(xp))));
    auto g1 = ag::backward(f);
    auto gx = ag::grad_of(g1, xp); // still a graph over xp
    auto phi = ag::dot(gx, ag::constant(c));
    auto g2 = ag::backward(phi);
    auto ana = ag::grad_of(g2, xp)->value.data;

    // numeric: central differences of the gradient itself
    std::vector<double> num(x0.numel());
    const double h = 1e-5;
    for (std::size_t i = 0; i < x0.numel(); ++i) {
        Tensor<double> xa = x0, xb = x0;
        xa.data[i] += h;
        xb.data[i] -= h;
        auto ga = grad_f(xa)->value, gb = grad_f(xb)->value;
        double da = 0, db = 0;
        for (std::size_t j = 0; j < x0.numel(); ++j) {
            da += ga.data[j] * c.data[j];
            db += gb.data[j] * c.data[j];
        }
        num[i] = (da - db) / (2 * h);
    }
    for (std::size_t i = 0; i < ana.size(); ++i)
        CHECK(std::abs(ana[i] - num[i]) <= 2e-5 * std::max(1.0, std::abs(num[i])));
}

TEST_CASE("backward with a wanted set prunes unrelated branches") {
    auto a = ag::param(rnd_t({5}, 71));
    auto b = ag::param(rnd_t({5}, 72));
    auto c = ag::param(rnd_t({5}, 73));
    auto root = ag::add(ag::dot(a, b), ag::dot(c, c));

    std::vector<NodePtr<double>> wanted{a};
    auto grads = ag::backward(root, &wanted);
    CHECK(grads.count(a.get()) == 1);
    CHECK(grads.count(c.get()) == 0); // pruned entirely

    // and the surviving gradient equals the unpruned one
    auto full = ag::backward(root);
    auto ga = ag::grad_of(grads, a)->value;
    auto gafull = ag::grad_of(full, a)->value;
    for (std::size_t i = 0; i < 5; ++i) CHECK(ga.data[i] == gafull.data[i]);
}

TEST_CASE("graphs with self-referencing backward closures do not leak") {
    std::weak_ptr<ag::Node<double>> watch;
    {
        auto x = ag::param(rnd_t({4}, 81, 0.5, 1.5));
        auto d = ag::div(ag::constant(rnd_t({4}, 82)), x);
        auto e = ag::exp_(d);
        auto root = ag::sum_all(ag::sqrt_(ag::sigmoid(e)));
        watch = root;
        auto grads = ag::backward(root);
        CHECK(ag::grad_of(grads, x)->value.numel() == 4);
    }
    CHECK(watch.expired());
}

TEST_CASE("elementwise ops reject shape mismatches") {
    auto a = ag::constant(rnd_t({4}, 91));
    auto b = ag::constant(rnd_t({5}, 92));
    CHECK_THROWS_AS((void)ag::add(a, b), ShapeError);
    CHECK_THROWS_AS((void)ag::mul(a, b), ShapeError);
    CHECK_THROWS_AS((void)ag::dot(a, b), ShapeError);
}
