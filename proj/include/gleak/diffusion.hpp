#ifndef GLEAK_DIFFUSION_HPP
#define GLEAK_DIFFUSION_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gleak/errors.hpp"
#include "gleak/gradient.hpp"
#include "gleak/graph.hpp"
#include "gleak/io.hpp"
#include "gleak/optim.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

namespace gleak {

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

// beta[t] is 1-based (beta[0] unused); alpha_bar[t] = prod_{s<=t} (1-beta[s])
// with alpha_bar[0] = 1. Coefficients are kept in double regardless of the
// pipeline precision and cast at the point of use.
struct NoiseSchedule {
    std::size_t steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
};

inline NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end) {
    if (T < 1) throw ScheduleError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ScheduleError("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 1.0);
    for (std::size_t t = 1; t <= T; ++t) {
        s.beta[t] = (T == 1) ? beta_start
                             : beta_start + (double(t - 1) / double(T - 1)) * (beta_end - beta_start);
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    }
    return s;
}

inline void require_step(const NoiseSchedule& s, std::size_t t, const char* op) {
    if (t < 1 || t > s.steps)
        throw StepRangeError(std::string(op) + ": t=" + std::to_string(t) + " outside [1," +
                             std::to_string(s.steps) + "]");
}

// S uniformly spaced integer timesteps over [1, t0], endpoints included,
// ascending. Requires S <= t0 so the points are strictly increasing.
inline std::vector<std::size_t> timestep_points(std::size_t t0, std::size_t S) {
    if (S < 1 || S > t0) throw SamplerSpecError("timestep_points: need 1 <= S <= t0");
    std::vector<std::size_t> pts(S);
    if (S == 1) {
        pts[0] = t0;
        return pts;
    }
    for (std::size_t i = 0; i < S; ++i)
        pts[i] = (std::size_t)std::llround(1.0 + double(i) * double(t0 - 1) / double(S - 1));
    return pts;
}

// ---------------------------------------------------------------------------
// Signed/unit range mapping: diffusion runs on [-1,1], metrics on [0,1].
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> to_signed_range(const Tensor<T>& unit) {
    Tensor<T> out = unit;
    for (auto& v : out.data) v = T(2) * v - T(1);
    return out;
}

template <class T>
Tensor<T> to_unit_range(const Tensor<T>& sgn) {
    Tensor<T> out = sgn;
    for (auto& v : out.data) v = (v + T(1)) / T(2);
    return out;
}

template <class T>
ag::NodePtr<T> to_unit_range_node(const ag::NodePtr<T>& sgn) {
    return ag::mul_const(ag::add_const(sgn, 1.0), 0.5);
}

// ---------------------------------------------------------------------------
// The noise-prediction network: a small U-shaped conv net, 2 downsampling
// stages, widths base / 2*base, sinusoidal timestep embedding added to the
// features of every block through a per-block linear projection.
// ---------------------------------------------------------------------------

template <class T>
struct DiffusionModel {
    std::size_t base = 16;
    std::vector<std::size_t> image_chw;  // {C,H,W}
    std::map<std::string, Tensor<T>> theta;
};

namespace detail {

struct UnetBlock {
    std::string tag;
    std::size_t in_ch, out_ch, stride;
    bool temb;
};

inline std::vector<UnetBlock> unet_blocks(std::size_t c, std::size_t base) {
    return {
        {"b00.enc0", c, base, 1, true},
        {"b01.enc1", base, 2 * base, 2, true},
        {"b02.enc2", 2 * base, 2 * base, 2, true},
        {"b03.mid", 2 * base, 2 * base, 1, true},
        {"b04.dec1", 4 * base, base, 1, true},
        {"b05.dec2", 2 * base, base, 1, true},
        {"b06.out", base, c, 1, false},
    };
}

inline std::size_t temb_dim(std::size_t base) { return 2 * base; }

} // namespace detail

template <class T>
std::map<std::string, std::vector<std::size_t>> diffusion_parameter_shapes(std::size_t c,
                                                                           std::size_t base) {
    std::map<std::string, std::vector<std::size_t>> s;
    const std::size_t e = detail::temb_dim(base);
    for (const auto& b : detail::unet_blocks(c, base)) {
        s[b.tag + ".w"] = {b.out_ch, b.in_ch, 3, 3};
        s[b.tag + ".b"] = {b.out_ch};
        if (b.temb) {
            s[b.tag + ".tw"] = {b.out_ch, e};
            s[b.tag + ".tb"] = {b.out_ch};
        }
    }
    s["temb.l1.w"] = {e, e};
    s["temb.l1.b"] = {e};
    s["temb.l2.w"] = {e, e};
    s["temb.l2.b"] = {e};
    return s;
}

template <class T>
DiffusionModel<T> make_diffusion_model(std::size_t height, std::size_t width, std::size_t channels,
                                       std::size_t base, std::uint64_t seed) {
    if (height % 4 || width % 4 || height < 4 || width < 4)
        throw ConfigError("diffusion model: image height/width must be multiples of 4");
    DiffusionModel<T> m;
    m.base = base;
    m.image_chw = {channels, height, width};
    Rng rng(seed, {stream::diff_init});
    // draw order: canonical (lexicographic) parameter order, row-major
    for (const auto& [name, shape] : diffusion_parameter_shapes<T>(channels, base)) {
        Tensor<T> t(shape);
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
        if (shape.size() == 1) fan_in = shape[0];
        double s = 1.0 / std::sqrt(double(fan_in));
        // keep the output head small so the untrained net starts near the
        // zero predictor without degenerate (exactly zero) derivatives
        if (name.rfind("b06.out", 0) == 0) s *= 0.01;
        for (auto& v : t.data) v = T(rng.uniform(-0.5, 0.5) * s);
        m.theta.emplace(name, std::move(t));
    }
    return m;
}

template <class T>
Tensor<T> sinusoidal_embedding(std::size_t t, std::size_t dim) {
    Tensor<T> e({dim});
    const std::size_t half = dim / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double w = std::exp(-std::log(10000.0) * double(k) / double(half));
        e[k] = T(std::sin(double(t) * w));
        e[half + k] = T(std::cos(double(t) * w));
    }
    return e;
}

template <class T>
std::map<std::string, ag::NodePtr<T>> theta_as_params(const DiffusionModel<T>& m) {
    std::map<std::string, ag::NodePtr<T>> out;
    for (const auto& [name, t] : m.theta) out.emplace(name, ag::param<T>(t));
    return out;
}

template <class T>
std::map<std::string, ag::NodePtr<T>> theta_as_consts(const DiffusionModel<T>& m) {
    std::map<std::string, ag::NodePtr<T>> out;
    for (const auto& [name, t] : m.theta) out.emplace(name, ag::constant<T>(t));
    return out;
}

// eps_theta(x_t, t) as a graph node; differentiable in both x and theta.
template <class T>
ag::NodePtr<T> eps_forward(const DiffusionModel<T>& m,
                           const std::map<std::string, ag::NodePtr<T>>& th,
                           const ag::NodePtr<T>& x, std::size_t t) {
    require_shape(x->value, m.image_chw, "eps_forward input");
    const std::size_t e = detail::temb_dim(m.base);
    auto emb = ag::constant<T>(sinusoidal_embedding<T>(t, e));
    auto h1 = ag::silu(ag::add(ag::matvec(th.at("temb.l1.w"), emb), th.at("temb.l1.b")));
    auto temb = ag::add(ag::matvec(th.at("temb.l2.w"), h1), th.at("temb.l2.b"));

    auto block = [&](const ag::NodePtr<T>& in, const detail::UnetBlock& b) {
        auto z = ag::bias_add(ag::conv2d(in, th.at(b.tag + ".w"), b.stride, 1), th.at(b.tag + ".b"));
        if (b.temb) {
            auto proj = ag::add(ag::matvec(th.at(b.tag + ".tw"), temb), th.at(b.tag + ".tb"));
            z = ag::bias_add(z, proj);
            z = ag::silu(z);
        }
        return z;
    };

    const auto blocks = detail::unet_blocks(m.image_chw[0], m.base);
    auto enc0 = block(x, blocks[0]);
    auto enc1 = block(enc0, blocks[1]);
    auto enc2 = block(enc1, blocks[2]);
    auto mid = block(enc2, blocks[3]);
    auto d1 = block(ag::concat_ch(ag::upsample(mid, 2), enc1), blocks[4]);
    auto d2 = block(ag::concat_ch(ag::upsample(d1, 2), enc0), blocks[5]);
    return block(d2, blocks[6]);
}

template <class T>
Tensor<T> eps_eval(const DiffusionModel<T>& m, const Tensor<T>& x, std::size_t t) {
    auto th = theta_as_consts(m);
    return eps_forward(m, th, ag::constant<T>(x), t)->value;
}

// ---------------------------------------------------------------------------
// Core diffusion algebra (Eq-level pieces, exposed for direct testing)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, std::size_t t, const NoiseSchedule& s,
                          const Tensor<T>& eps) {
    require_step(s, t, "forward_diffuse");
    if (!x0.same_shape(eps)) throw ShapeError("forward_diffuse: x0/eps shape mismatch");
    const T a = T(std::sqrt(s.alpha_bar[t]));
    const T b = T(std::sqrt(1.0 - s.alpha_bar[t]));
    Tensor<T> out = x0;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

template <class T>
Tensor<T> predict_x0_from(const Tensor<T>& x_t, const Tensor<T>& eps_hat, double alpha_bar_t) {
    if (!(alpha_bar_t > 0.0)) throw SingularStep("predict_x0: alpha_bar must be positive");
    if (!x_t.same_shape(eps_hat)) throw ShapeError("predict_x0: shape mismatch");
    const T sa = T(std::sqrt(alpha_bar_t));
    const T sb = T(std::sqrt(1.0 - alpha_bar_t));
    Tensor<T> out = x_t;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - sb * eps_hat[i]) / sa;
    return out;
}

template <class T>
ag::NodePtr<T> predict_x0_from_node(const ag::NodePtr<T>& x_t, const ag::NodePtr<T>& eps_hat,
                                    double alpha_bar_t) {
    if (!(alpha_bar_t > 0.0)) throw SingularStep("predict_x0: alpha_bar must be positive");
    const double sa = std::sqrt(alpha_bar_t);
    const double sb = std::sqrt(1.0 - alpha_bar_t);
    return ag::mul_const(ag::sub(x_t, ag::mul_const(eps_hat, sb)), 1.0 / sa);
}

template <class T>
Tensor<T> ddim_combine(const Tensor<T>& f_pred, const Tensor<T>& eps_hat, double alpha_bar_prev) {
    if (!f_pred.same_shape(eps_hat)) throw ShapeError("ddim_combine: shape mismatch");
    const T sa = T(std::sqrt(alpha_bar_prev));
    const T sb = T(std::sqrt(1.0 - alpha_bar_prev));
    Tensor<T> out = f_pred;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sa * f_pred[i] + sb * eps_hat[i];
    return out;
}

template <class T>
Tensor<T> predict_x0(const DiffusionModel<T>& m, const Tensor<T>& x_t, std::size_t t,
                     const NoiseSchedule& s) {
    require_step(s, t, "predict_x0");
    return predict_x0_from(x_t, eps_eval(m, x_t, t), s.alpha_bar[t]);
}

// One deterministic reverse step t -> t_prev (sigma = 0). t_prev = 0 allowed
// with alpha_bar[0] = 1.
template <class T>
Tensor<T> ddim_step(const DiffusionModel<T>& m, const Tensor<T>& x_t, std::size_t t,
                    std::size_t t_prev, const NoiseSchedule& s) {
    require_step(s, t, "ddim_step");
    if (t_prev >= t) throw StepRangeError("ddim_step: t_prev must be below t");
    Tensor<T> eps_hat = eps_eval(m, x_t, t);
    Tensor<T> f = predict_x0_from(x_t, eps_hat, s.alpha_bar[t]);
    return ddim_combine(f, eps_hat, s.alpha_bar[t_prev]);
}

template <class T>
ag::NodePtr<T> ddim_step_node(const DiffusionModel<T>& m,
                              const std::map<std::string, ag::NodePtr<T>>& th,
                              const ag::NodePtr<T>& x_t, std::size_t t, std::size_t t_prev,
                              const NoiseSchedule& s) {
    require_step(s, t, "ddim_step");
    if (t_prev >= t) throw StepRangeError("ddim_step: t_prev must be below t");
    auto eps_hat = eps_forward(m, th, x_t, t);
    auto f = predict_x0_from_node(x_t, eps_hat, s.alpha_bar[t]);
    const double sa = std::sqrt(s.alpha_bar[t_prev]);
    const double sb = std::sqrt(1.0 - s.alpha_bar[t_prev]);
    return ag::add(ag::mul_const(f, sa), ag::mul_const(eps_hat, sb));
}

// One stochastic reverse step with sigma_t = sqrt(beta_t) and injected z.
template <class T>
Tensor<T> ddpm_step_from(const Tensor<T>& x_t, const Tensor<T>& eps_hat, double beta_t,
                         double alpha_bar_t, const Tensor<T>& z) {
    if (!x_t.same_shape(eps_hat) || !x_t.same_shape(z)) throw ShapeError("ddpm_step: shape mismatch");
    const T inv = T(1.0 / std::sqrt(1.0 - beta_t));
    const T k = T(beta_t / std::sqrt(1.0 - alpha_bar_t));
    const T sig = T(std::sqrt(beta_t));
    Tensor<T> out = x_t;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = inv * (x_t[i] - k * eps_hat[i]) + sig * z[i];
    return out;
}

template <class T>
Tensor<T> ddpm_step(const DiffusionModel<T>& m, const Tensor<T>& x_t, std::size_t t,
                    const NoiseSchedule& s, const Tensor<T>& z) {
    if (t == 0) throw StepRangeError("ddpm_step: t must be >= 1");
    require_step(s, t, "ddpm_step");
    return ddpm_step_from(x_t, eps_eval(m, x_t, t), s.beta[t], s.alpha_bar[t], z);
}

// ---------------------------------------------------------------------------
// Training (eps-matching objective)
// ---------------------------------------------------------------------------

// Builds the training loss node for a fixed draw of (t_b, eps_b): mean over
// the batch of the squared norm ||eps - eps_theta(x_t, t)||^2.
template <class T>
ag::NodePtr<T> train_loss_node(const DiffusionModel<T>& m,
                               const std::map<std::string, ag::NodePtr<T>>& th,
                               const std::vector<Tensor<T>>& batch_signed,
                               const std::vector<std::size_t>& ts,
                               const std::vector<Tensor<T>>& epss, const NoiseSchedule& s) {
    ag::NodePtr<T> total;
    for (std::size_t b = 0; b < batch_signed.size(); ++b) {
        Tensor<T> x_t = forward_diffuse(batch_signed[b], ts[b], s, epss[b]);
        auto eps_hat = eps_forward(m, th, ag::constant<T>(x_t), ts[b]);
        auto d = ag::sub(ag::constant<T>(epss[b]), eps_hat);
        auto sq = ag::dot(ag::reshape(d, {d->value.numel()}), ag::reshape(d, {d->value.numel()}));
        total = total ? ag::add(total, sq) : sq;
    }
    return ag::mul_const(total, 1.0 / double(batch_signed.size()));
}

template <class T>
void draw_train_batch(const std::vector<Tensor<T>>& dataset_signed, std::size_t batch,
                      const NoiseSchedule& s, Rng& rng, std::vector<Tensor<T>>& xs,
                      std::vector<std::size_t>& ts, std::vector<Tensor<T>>& epss) {
    xs.clear();
    ts.clear();
    epss.clear();
    for (std::size_t b = 0; b < batch; ++b) {
        xs.push_back(dataset_signed[rng.uniform_index(dataset_signed.size())]);
        ts.push_back(1 + (std::size_t)rng.uniform_index(s.steps));
        Tensor<T> e(xs.back().shape);
        for (auto& v : e.data) v = T(rng.gaussian());
        epss.push_back(std::move(e));
    }
}

// One optimizer update; returns the pre-update loss.
template <class T>
double train_step(DiffusionModel<T>& m, const std::vector<Tensor<T>>& batch_signed,
                  const std::vector<std::size_t>& ts, const std::vector<Tensor<T>>& epss,
                  const NoiseSchedule& s, Adam<T>& opt, double lr) {
    if (batch_signed.empty()) throw ConfigError("train_step: empty batch");
    auto th = theta_as_params(m);
    auto loss = train_loss_node(m, th, batch_signed, ts, epss, s);
    const double value = double(loss->value[0]);
    if (!std::isfinite(value)) throw NonFiniteGradient("train_step: non-finite loss");
    std::vector<ag::NodePtr<T>> wanted;
    for (const auto& [name, node] : th) wanted.push_back(node);
    auto grads = ag::backward(loss, &wanted);
    std::map<std::string, Tensor<T>> gm;
    for (const auto& [name, node] : th) gm.emplace(name, ag::grad_of(grads, node)->value);
    opt.step(m.theta, gm, lr);
    return value;
}

// Full training driver; returns the loss curve.
template <class T>
std::vector<double> train_diffusion(DiffusionModel<T>& m,
                                    const std::vector<Tensor<T>>& dataset_signed,
                                    const NoiseSchedule& s, std::size_t steps, std::size_t batch,
                                    double lr, std::uint64_t seed) {
    if (dataset_signed.empty()) throw ConfigError("train_diffusion: empty dataset");
    Rng rng(seed, {stream::diff_train});
    Adam<T> opt;
    std::vector<double> curve;
    curve.reserve(steps);
    std::vector<Tensor<T>> xs, epss;
    std::vector<std::size_t> ts;
    for (std::size_t i = 0; i < steps; ++i) {
        draw_train_batch(dataset_signed, batch, s, rng, xs, ts, epss);
        curve.push_back(train_step(m, xs, ts, epss, s, opt, lr));
    }
    return curve;
}

// grad_check adapter for the training loss at a fixed seeded draw.
template <class T>
DiffScalarFn<T> train_loss_as_function(const DiffusionModel<T>& m,
                                       const std::vector<Tensor<T>>& dataset_signed,
                                       std::size_t batch, const NoiseSchedule& s,
                                       std::uint64_t seed) {
    auto draw = [dataset_signed, batch, s, seed]() {
        Rng rng(seed, {stream::diff_train});
        std::vector<Tensor<T>> xs, epss;
        std::vector<std::size_t> ts;
        draw_train_batch(dataset_signed, batch, s, rng, xs, ts, epss);
        return std::tuple{xs, ts, epss};
    };
    DiffScalarFn<T> f;
    f.value = [m, s, draw](const std::map<std::string, Tensor<T>>& params) {
        DiffusionModel<T> mm = m;
        mm.theta = params;
        auto [xs, ts, epss] = draw();
        auto th = theta_as_consts(mm);
        return double(train_loss_node(mm, th, xs, ts, epss, s)->value[0]);
    };
    f.gradient = [m, s, draw](const std::map<std::string, Tensor<T>>& params) {
        DiffusionModel<T> mm = m;
        mm.theta = params;
        auto [xs, ts, epss] = draw();
        auto th = theta_as_params(mm);
        auto loss = train_loss_node(mm, th, xs, ts, epss, s);
        std::vector<ag::NodePtr<T>> wanted;
        for (const auto& [name, node] : th) wanted.push_back(node);
        auto grads = ag::backward(loss, &wanted);
        std::map<std::string, Tensor<T>> gm;
        for (const auto& [name, node] : th) gm.emplace(name, ag::grad_of(grads, node)->value);
        return flatten_gradients(gm);
    };
    return f;
}

// ---------------------------------------------------------------------------
// Latent precompute and generation
// ---------------------------------------------------------------------------

struct SamplerSpec {
    std::string kind = "ddim";  // "ddim" | "ddpm"
    std::size_t s_for = 40;
    std::size_t s_gen = 6;
    std::size_t t0 = 500;
    std::uint64_t seed = 0;  // used only by ddpm generation
};

inline void validate_sampler(const SamplerSpec& spec, const NoiseSchedule& s) {
    if (spec.kind != "ddim" && spec.kind != "ddpm")
        throw SamplerSpecError("sampler kind must be ddim or ddpm");
    if (spec.t0 < 1 || spec.t0 > s.steps) throw SamplerSpecError("sampler t0 outside schedule range");
    if (spec.s_for < 1 || spec.s_for > spec.t0) throw SamplerSpecError("sampler needs 1 <= s_for <= t0");
    if (spec.s_gen < 1 || spec.s_gen > spec.t0) throw SamplerSpecError("sampler needs 1 <= s_gen <= t0");
}

template <class T>
struct LatentRecord {
    Tensor<T> latent;  // x_{t0}, signed range
    std::size_t t0 = 0;
    std::vector<std::size_t> forward_steps_used;
    std::string source_id;
    std::uint64_t noise_seed = 0;
};

// Iterated forward chain along the ascending sub-sequence; each hop applies
// the per-step transition whose composition matches the closed-form marginal
// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps in distribution.
template <class T>
LatentRecord<T> precompute_latent(const DiffusionModel<T>& m, const Tensor<T>& x_ref_signed,
                                  const SamplerSpec& spec, const NoiseSchedule& s,
                                  std::uint64_t noise_seed, const std::string& source_id = "ref") {
    validate_sampler(spec, s);
    require_shape(x_ref_signed, m.image_chw, "precompute_latent reference");
    Rng rng(noise_seed, {stream::latent});
    LatentRecord<T> rec;
    rec.t0 = spec.t0;
    rec.forward_steps_used = timestep_points(spec.t0, spec.s_for);
    rec.source_id = source_id;
    rec.noise_seed = noise_seed;
    Tensor<T> x = x_ref_signed;
    double prev_ab = 1.0;
    for (std::size_t t : rec.forward_steps_used) {
        const double ab = s.alpha_bar[t];
        const double ratio = ab / prev_ab;
        const T sa = T(std::sqrt(ratio));
        const T sb = T(std::sqrt(1.0 - ratio));
        for (auto& v : x.data) v = sa * v + sb * T(rng.gaussian());
        prev_ab = ab;
    }
    if (!x.all_finite()) throw NonFiniteGradient("precompute_latent: non-finite latent");
    rec.latent = std::move(x);
    return rec;
}

// Differentiable DDIM generation from a fixed latent down the descending
// sub-sequence, finishing at t = 0. Returns the signed-range image node.
template <class T>
ag::NodePtr<T> generate_node(const DiffusionModel<T>& m,
                             const std::map<std::string, ag::NodePtr<T>>& th,
                             const LatentRecord<T>& latent, const SamplerSpec& spec,
                             const NoiseSchedule& s) {
    validate_sampler(spec, s);
    if (spec.t0 != latent.t0) throw SamplerSpecError("generate: latent t0 disagrees with sampler");
    auto pts = timestep_points(spec.t0, spec.s_gen);  // ascending
    ag::NodePtr<T> x = ag::constant<T>(latent.latent);
    for (std::size_t i = pts.size(); i-- > 0;) {
        const std::size_t t = pts[i];
        const std::size_t t_prev = i > 0 ? pts[i - 1] : 0;
        x = ddim_step_node(m, th, x, t, t_prev, s);
    }
    return x;
}

template <class T>
Tensor<T> generate(const DiffusionModel<T>& m, const LatentRecord<T>& latent,
                   const SamplerSpec& spec, const NoiseSchedule& s) {
    validate_sampler(spec, s);
    if (spec.t0 != latent.t0) throw SamplerSpecError("generate: latent t0 disagrees with sampler");
    if (spec.kind == "ddim") {
        auto th = theta_as_consts(m);
        return generate_node(m, th, latent, spec, s)->value;
    }
    // ddpm: adjacent-step stochastic chain from t0 down to 1; the final step
    // injects no noise. s_gen does not sub-sample the stochastic chain.
    Rng rng(spec.seed, {stream::sampler});
    Tensor<T> x = latent.latent;
    for (std::size_t t = spec.t0; t >= 1; --t) {
        Tensor<T> z(x.shape);
        if (t > 1)
            for (auto& v : z.data) v = T(rng.gaussian());
        x = ddpm_step(m, x, t, s, z);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

template <class T>
void save_diffusion_model(const DiffusionModel<T>& m, const std::string& path) {
    auto os = io::open_out(path);
    io::put_string(os, "gleak-diffusion-v1");
    io::put_u64(os, m.base);
    io::put_u64(os, m.image_chw[1]);
    io::put_u64(os, m.image_chw[2]);
    io::put_u64(os, m.image_chw[0]);
    io::put_weight_map(os, m.theta);
    if (!os) throw IoError("failed writing '" + path + "'");
}

template <class T>
DiffusionModel<T> load_diffusion_model(const std::string& path) {
    auto is = io::open_in(path);
    if (io::get_string(is) != "gleak-diffusion-v1")
        throw IoError("'" + path + "': not a diffusion model file");
    DiffusionModel<T> m;
    m.base = io::get_u64(is);
    const std::size_t h = io::get_u64(is), w = io::get_u64(is), c = io::get_u64(is);
    m.image_chw = {c, h, w};
    m.theta = io::get_weight_map<T>(is);
    auto want = diffusion_parameter_shapes<T>(c, m.base);
    if (want.size() != m.theta.size()) throw ShapeError("'" + path + "': parameter set mismatch");
    for (const auto& [name, shape] : want) {
        auto it = m.theta.find(name);
        if (it == m.theta.end() || it->second.shape != shape)
            throw ShapeError("'" + path + "': bad parameter " + name);
    }
    return m;
}

} // namespace gleak

#endif
