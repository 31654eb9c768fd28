#ifndef GLEAK_MODEL_HPP
#define GLEAK_MODEL_HPP

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/gradient.hpp"
#include "gleak/graph.hpp"
#include "gleak/io.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

// The attacked classifier F(x, W). Architectures come from a small registry;
// weights are immutable after construction as far as the attacks are
// concerned (single-snapshot threat model).

enum class LayerKind { conv, sigmoid, dense };

struct LayerSpec {
    LayerKind kind;
    std::size_t out_ch = 0, ksize = 0, stride = 1, pad = 0;  // conv
    std::size_t units = 0;                                   // dense
};

template <class T>
struct LabeledExample {
    Tensor<T> image;  // {C,H,W}, values in [0,1]
    std::size_t label = 0;
};

template <class T>
struct TargetModel {
    std::string arch_id;
    std::vector<LayerSpec> layers;
    std::vector<std::size_t> input_chw;  // {C,H,W}
    std::size_t num_classes = 0;
    std::map<std::string, Tensor<T>> weights;
};

inline std::vector<LayerSpec> registry_layers(const std::string& arch_id, std::size_t num_classes) {
    if (arch_id == "dlg-lenet") {
        return {
            {LayerKind::conv, 12, 5, 2, 2},
            {LayerKind::sigmoid},
            {LayerKind::conv, 12, 5, 2, 2},
            {LayerKind::sigmoid},
            {LayerKind::conv, 12, 5, 1, 2},
            {LayerKind::sigmoid},
            {LayerKind::conv, 12, 5, 1, 2},
            {LayerKind::sigmoid},
            {LayerKind::dense, 0, 0, 1, 0, num_classes},
        };
    }
    if (arch_id == "linear") {
        return {{LayerKind::dense, 0, 0, 1, 0, num_classes}};
    }
    throw ConfigError("unknown target model architecture '" + arch_id + "'");
}

inline std::string layer_param_name(std::size_t layer_idx, const char* role, const char* leaf) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "L%02zu.%s.%s", layer_idx, role, leaf);
    return buf;
}

// Walk the layer list and report each parameter's shape. Shapes depend on the
// input size, so this doubles as the architecture/shape consistency check.
template <class T>
std::map<std::string, std::vector<std::size_t>> parameter_shapes(
    const std::vector<LayerSpec>& layers, const std::vector<std::size_t>& input_chw) {
    std::map<std::string, std::vector<std::size_t>> shapes;
    std::size_t c = input_chw[0], h = input_chw[1], w = input_chw[2];
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        switch (l.kind) {
            case LayerKind::conv: {
                if (h + 2 * l.pad < l.ksize || w + 2 * l.pad < l.ksize)
                    throw ShapeError("conv layer " + std::to_string(i) + ": input too small");
                shapes[layer_param_name(i, "conv", "w")] = {l.out_ch, c, l.ksize, l.ksize};
                shapes[layer_param_name(i, "conv", "b")] = {l.out_ch};
                h = (h + 2 * l.pad - l.ksize) / l.stride + 1;
                w = (w + 2 * l.pad - l.ksize) / l.stride + 1;
                c = l.out_ch;
                break;
            }
            case LayerKind::sigmoid:
                break;
            case LayerKind::dense: {
                const std::size_t in = c * h * w;
                shapes[layer_param_name(i, "dense", "w")] = {l.units, in};
                shapes[layer_param_name(i, "dense", "b")] = {l.units};
                c = l.units;
                h = w = 1;
                break;
            }
        }
    }
    return shapes;
}

// H, W, C is the external image convention; internally tensors are {C,H,W}.
template <class T>
TargetModel<T> make_target_model(const std::string& arch_id, std::size_t height, std::size_t width,
                                 std::size_t channels, std::size_t num_classes,
                                 std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("target model needs at least 2 classes");
    TargetModel<T> m;
    m.arch_id = arch_id;
    m.layers = registry_layers(arch_id, num_classes);
    m.input_chw = {channels, height, width};
    m.num_classes = num_classes;

    // Seeded uniform [-0.5, 0.5] scaled by 1/sqrt(fan_in); draw order is the
    // layer walk order, w before b, row-major within a tensor.
    Rng rng(seed, {stream::model_init});
    std::size_t c = channels, h = height, w = width;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& l = m.layers[i];
        if (l.kind == LayerKind::conv) {
            const double s = 1.0 / std::sqrt(double(c * l.ksize * l.ksize));
            Tensor<T> wt({l.out_ch, c, l.ksize, l.ksize});
            for (auto& v : wt.data) v = T(rng.uniform(-0.5, 0.5) * s);
            Tensor<T> bt({l.out_ch});
            for (auto& v : bt.data) v = T(rng.uniform(-0.5, 0.5) * s);
            m.weights.emplace(layer_param_name(i, "conv", "w"), std::move(wt));
            m.weights.emplace(layer_param_name(i, "conv", "b"), std::move(bt));
            h = (h + 2 * l.pad - l.ksize) / l.stride + 1;
            w = (w + 2 * l.pad - l.ksize) / l.stride + 1;
            c = l.out_ch;
        } else if (l.kind == LayerKind::dense) {
            const std::size_t in = c * h * w;
            const double s = 1.0 / std::sqrt(double(in));
            Tensor<T> wt({l.units, in});
            for (auto& v : wt.data) v = T(rng.uniform(-0.5, 0.5) * s);
            Tensor<T> bt({l.units});
            for (auto& v : bt.data) v = T(rng.uniform(-0.5, 0.5) * s);
            m.weights.emplace(layer_param_name(i, "dense", "w"), std::move(wt));
            m.weights.emplace(layer_param_name(i, "dense", "b"), std::move(bt));
            c = l.units;
            h = w = 1;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Forward / loss / gradient through the graph
// ---------------------------------------------------------------------------

template <class T>
std::map<std::string, ag::NodePtr<T>> weights_as_params(const TargetModel<T>& m) {
    std::map<std::string, ag::NodePtr<T>> out;
    for (const auto& [name, t] : m.weights) out.emplace(name, ag::param<T>(t));
    return out;
}

template <class T>
ag::NodePtr<T> build_logits(const TargetModel<T>& m, const ag::NodePtr<T>& x,
                            const std::map<std::string, ag::NodePtr<T>>& wn) {
    require_shape(x->value, m.input_chw, "target model input");
    ag::NodePtr<T> h = x;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const LayerSpec& l = m.layers[i];
        switch (l.kind) {
            case LayerKind::conv:
                h = ag::bias_add(ag::conv2d(h, wn.at(layer_param_name(i, "conv", "w")), l.stride, l.pad),
                                 wn.at(layer_param_name(i, "conv", "b")));
                break;
            case LayerKind::sigmoid:
                h = ag::sigmoid(h);
                break;
            case LayerKind::dense:
                h = ag::add(ag::matvec(wn.at(layer_param_name(i, "dense", "w")),
                                       ag::reshape(h, {h->value.numel()})),
                            wn.at(layer_param_name(i, "dense", "b")));
                break;
        }
    }
    return h;
}

template <class T>
Tensor<T> forward(const TargetModel<T>& m, const Tensor<T>& x) {
    std::map<std::string, ag::NodePtr<T>> wn;
    for (const auto& [name, t] : m.weights) wn.emplace(name, ag::constant<T>(t));
    Tensor<T> scores = build_logits(m, ag::constant<T>(x), wn)->value;
    if (!scores.all_finite()) throw NonFiniteGradient("forward: non-finite score");
    return scores;
}

template <class T>
double loss(const TargetModel<T>& m, const LabeledExample<T>& ex) {
    if (ex.label >= m.num_classes) throw LabelError("loss: label out of range");
    std::map<std::string, ag::NodePtr<T>> wn;
    for (const auto& [name, t] : m.weights) wn.emplace(name, ag::constant<T>(t));
    auto ce = ag::softmax_cross_entropy(build_logits(m, ag::constant<T>(ex.image), wn), ex.label);
    return double(ce->value[0]);
}

// Cross-entropy node plus the flattened gradient-of-weights node, in
// canonical parameter order. The gradient node stays differentiable, which is
// what both attacks differentiate through a second time.
template <class T>
struct GradientGraph {
    ag::NodePtr<T> ce;
    ag::NodePtr<T> flat_grad;
    std::vector<LayoutEntry> layout;
};

template <class T>
GradientGraph<T> build_gradient_graph(const TargetModel<T>& m, const ag::NodePtr<T>& x,
                                      std::size_t label,
                                      const std::map<std::string, ag::NodePtr<T>>& wn) {
    if (label >= m.num_classes) throw LabelError("build_gradient_graph: label out of range");
    auto ce = ag::softmax_cross_entropy(build_logits(m, x, wn), label);
    std::vector<ag::NodePtr<T>> wanted;
    for (const auto& [name, wnode] : wn) wanted.push_back(wnode);
    auto grads = ag::backward(ce, &wanted);
    GradientGraph<T> g;
    g.ce = ce;
    std::vector<ag::NodePtr<T>> parts;
    for (const auto& [name, wnode] : wn) {
        auto gn = ag::grad_of(grads, wnode);
        parts.push_back(ag::reshape(gn, {gn->value.numel()}));
        g.layout.push_back({name, wnode->value.shape});
    }
    g.flat_grad = ag::concat1(parts);
    return g;
}

template <class T>
GradientVector<T> compute_gradient(const TargetModel<T>& m, const LabeledExample<T>& ex) {
    auto wn = weights_as_params(m);
    auto gg = build_gradient_graph(m, ag::constant<T>(ex.image), ex.label, wn);
    GradientVector<T> out;
    out.layout = gg.layout;
    out.values = gg.flat_grad->value.data;
    for (const auto& v : out.values)
        if (!std::isfinite(double(v))) throw NonFiniteGradient("compute_gradient: non-finite entry");
    return out;
}

// Mean of per-example gradients, the quantity a batch of size b leaks.
template <class T>
GradientVector<T> mean_gradient(const TargetModel<T>& m, const std::vector<LabeledExample<T>>& exs) {
    if (exs.empty()) throw ConfigError("mean_gradient: empty batch");
    GradientVector<T> acc = compute_gradient(m, exs[0]);
    for (std::size_t i = 1; i < exs.size(); ++i) {
        GradientVector<T> g = compute_gradient(m, exs[i]);
        require_same_layout(acc, g, "mean_gradient");
        for (std::size_t j = 0; j < acc.size(); ++j) acc.values[j] += g.values[j];
    }
    const T inv = T(1.0 / double(exs.size()));
    for (auto& v : acc.values) v *= inv;
    return acc;
}

// grad_check adapter: the model's loss as a function of its weight map.
template <class T>
DiffScalarFn<T> loss_as_function(const TargetModel<T>& m, const LabeledExample<T>& ex) {
    DiffScalarFn<T> f;
    f.value = [m, ex](const std::map<std::string, Tensor<T>>& params) {
        TargetModel<T> mm = m;
        mm.weights = params;
        return loss(mm, ex);
    };
    f.gradient = [m, ex](const std::map<std::string, Tensor<T>>& params) {
        TargetModel<T> mm = m;
        mm.weights = params;
        return compute_gradient(mm, ex);
    };
    return f;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

template <class T>
void save_target_model(const TargetModel<T>& m, const std::string& path) {
    auto os = io::open_out(path);
    io::put_string(os, "gleak-target-v1");
    io::put_string(os, m.arch_id);
    io::put_u64(os, m.input_chw[1]);  // H
    io::put_u64(os, m.input_chw[2]);  // W
    io::put_u64(os, m.input_chw[0]);  // C
    io::put_u64(os, m.num_classes);
    io::put_weight_map(os, m.weights);
    if (!os) throw IoError("failed writing '" + path + "'");
}

template <class T>
TargetModel<T> load_target_model(const std::string& path) {
    auto is = io::open_in(path);
    if (io::get_string(is) != "gleak-target-v1") throw IoError("'" + path + "': not a target model file");
    TargetModel<T> m;
    m.arch_id = io::get_string(is);
    const std::size_t h = io::get_u64(is), w = io::get_u64(is), c = io::get_u64(is);
    m.num_classes = io::get_u64(is);
    m.layers = registry_layers(m.arch_id, m.num_classes);
    m.input_chw = {c, h, w};
    m.weights = io::get_weight_map<T>(is);
    auto want = parameter_shapes<T>(m.layers, m.input_chw);
    if (want.size() != m.weights.size()) throw ShapeError("'" + path + "': parameter set mismatch");
    for (const auto& [name, shape] : want) {
        auto it = m.weights.find(name);
        if (it == m.weights.end()) throw ShapeError("'" + path + "': missing parameter " + name);
        if (it->second.shape != shape) throw ShapeError("'" + path + "': bad shape for " + name);
    }
    return m;
}

} // namespace gleak

#endif
