#ifndef GLEAK_ATTACK_HPP
#define GLEAK_ATTACK_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gleak/diffusion.hpp"
#include "gleak/errors.hpp"
#include "gleak/gradient.hpp"
#include "gleak/graph.hpp"
#include "gleak/metrics.hpp"
#include "gleak/model.hpp"
#include "gleak/optim.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

// The two reconstruction attacks.
//
// dlg: optimize a dummy input x' by plain gradient descent on
//      || grad F(x', W) - g* ||^2, differentiating through the gradient.
// ggdm: fine-tune a diffusion model theta-hat so that the image it generates
//      from a fixed latent yields a gradient close (in cosine distance) to the
//      leaked one. Adam with an externally decayed learning rate
//      lr_t = eta * gamma^(t-1); the image is regenerated through the DDIM
//      chain every iteration, which is what makes the loss depend on theta.
//
// Iteration accounting, used consistently by both attacks: row t records the
// state BEFORE the t-th update (its loss, its image metrics), then the update
// runs. Row 1 is therefore the untouched starting point. final_image is the
// result after the last update; for ggdm it is one extra deterministic
// generation and equals reconstruct() bit for bit.

namespace gleak {

enum class AttackMethod { dlg, ggdm };

inline AttackMethod attack_method_from_string(const std::string& s) {
    if (s == "dlg") return AttackMethod::dlg;
    if (s == "ggdm") return AttackMethod::ggdm;
    throw ConfigError("unknown attack method '" + s + "' (want dlg or ggdm)");
}

inline std::string to_string(AttackMethod m) {
    return m == AttackMethod::dlg ? "dlg" : "ggdm";
}

struct AttackConfig {
    AttackMethod method = AttackMethod::ggdm;
    long max_iterations = 200;
    double eta = 2e-4;           // initial learning rate (ggdm)
    double gamma = 0.98;         // per-iteration decay (ggdm)
    SamplerSpec sampler{};       // ggdm only
    std::size_t batch_size = 1;
    long snapshot_every = 10;    // plus iteration 1 and the final iteration
    double dlg_step = 0.0;       // dlg only; 0 picks the per-arch default
    std::uint64_t seed = 1;
};

inline void validate_attack_config(const AttackConfig& cfg) {
    if (cfg.max_iterations < 1) throw ConfigError("attack: max_iterations must be >= 1");
    if (!(cfg.eta > 0.0)) throw ConfigError("attack: eta must be positive");
    if (!(cfg.gamma > 0.0)) throw ConfigError("attack: gamma must be positive");
    if (cfg.batch_size < 1) throw ConfigError("attack: batch_size must be >= 1");
}

struct TraceRow {
    long iteration = 0;
    double attack_loss = 0.0;
    double lr = 0.0;
    double mse = 0.0;
    double ssim = 0.0;
    double psnr = 0.0;
    double lpips_lite = 0.0;
    double wall_ms = 0.0;
};

struct Peak {
    long iteration = 0;
    double mse = std::numeric_limits<double>::quiet_NaN();
};

template <class T>
struct AttackTrace {
    std::vector<TraceRow> rows;
    std::map<long, Tensor<T>> snapshots;  // iteration -> image, unit range, unclipped
    Tensor<T> final_image;                // unit range; post final update
    Peak peak;                            // minimum-mse row (needs ground truth)
    bool aborted = false;
    std::string abort_reason;
};

template <class T>
struct FinetunedModelHandle {
    std::map<std::string, Tensor<T>> theta_hat;
    std::string target_id;
    AttackConfig config;
};

namespace attack_detail {

inline bool snapshot_due(long t, long every, long last) {
    if (t == 1 || t == last) return true;
    return every > 0 && t % every == 0;
}

template <class T>
std::vector<LayoutEntry> model_layout(const TargetModel<T>& m) {
    std::vector<LayoutEntry> out;
    for (const auto& [name, shape] : parameter_shapes<T>(m.layers, m.input_chw))
        out.push_back({name, shape});
    return out;
}

template <class T>
void require_model_layout(const GradientVector<T>& g, const TargetModel<T>& m, const char* op) {
    if (g.layout != model_layout(m))
        throw LayoutMismatch(std::string(op) + ": leaked gradient layout does not match the model");
}

template <class T>
void fill_metrics(TraceRow& row, const Tensor<T>& img, const Tensor<T>* gt) {
    if (!gt) {
        // attacker-visible trace: no ground truth, no quality columns
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.mse = row.ssim = row.psnr = row.lpips_lite = nan;
        return;
    }
    auto rep = metrics::evaluate(img, *gt);
    row.mse = rep.mse;
    row.ssim = rep.ssim;
    row.psnr = rep.psnr;
    row.lpips_lite = rep.lpips_lite;
}

template <class T>
void finalize_peak(AttackTrace<T>& tr) {
    tr.peak = Peak{};
    for (const auto& r : tr.rows)
        if (std::isfinite(r.mse) && (!std::isfinite(tr.peak.mse) || r.mse < tr.peak.mse))
            tr.peak = Peak{r.iteration, r.mse};
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Cosine-distance loss as a graph, mirroring the arithmetic of
// cosine_distance() operation for operation so a recorded loss can be
// reproduced offline from the snapshot it was computed from.
template <class T>
struct CosineLoss {
    ag::NodePtr<T> loss;
    ag::NodePtr<T> gen_norm_sq;  // dot(g, g), checked against zero
};

template <class T>
CosineLoss<T> cosine_loss_node(const ag::NodePtr<T>& gen, const ag::NodePtr<T>& target) {
    auto d = ag::dot(gen, target);
    auto ng = ag::dot(gen, gen);
    auto nh = ag::dot(target, target);
    auto denom = ag::mul(ag::sqrt_(ng), ag::sqrt_(nh));
    auto ratio = ag::div(d, denom);
    auto loss = ag::sub(ag::scalar_const<T>(1.0), ratio);
    return {loss, ng};
}

template <class T>
ag::NodePtr<T> gradient_as_const(const GradientVector<T>& g) {
    Tensor<T> t({g.size()});
    t.data = g.values;
    return ag::constant<T>(std::move(t));
}

} // namespace attack_detail

// ---------------------------------------------------------------------------
// DLG
// ---------------------------------------------------------------------------

template <class T>
AttackTrace<T> dlg_attack(const GradientVector<T>& target_grad, const TargetModel<T>& model,
                          std::size_t label, const AttackConfig& cfg,
                          const Tensor<T>* ground_truth = nullptr,
                          const Tensor<T>* initial_dummy = nullptr) {
    using namespace attack_detail;
    if (cfg.method != AttackMethod::dlg) throw ConfigError("dlg_attack: config method is not dlg");
    validate_attack_config(cfg);
    require_model_layout(target_grad, model, "dlg_attack");
    const double step = cfg.dlg_step > 0.0 ? cfg.dlg_step
                                           : (model.arch_id == "linear" ? 1.0 : 0.1);

    Tensor<T> x(model.input_chw);
    if (initial_dummy) {
        require_shape(*initial_dummy, model.input_chw, "dlg initial dummy");
        x = *initial_dummy;
    } else {
        Rng rng(cfg.seed, {stream::dummy_init});
        for (auto& v : x.data) v = T(rng.gaussian());
    }

    auto tgt = gradient_as_const(target_grad);
    AttackTrace<T> trc;
    trc.rows.reserve(std::size_t(cfg.max_iterations));

    for (long t = 1; t <= cfg.max_iterations; ++t) {
        const auto t_start = std::chrono::steady_clock::now();
        auto xp = ag::param<T>(x);
        auto wn = weights_as_params(model);
        auto gg = build_gradient_graph(model, xp, label, wn);
        auto dlt = ag::sub(gg.flat_grad, tgt);
        auto loss = ag::dot(dlt, dlt);
        const double loss_val = double(loss->value[0]);

        TraceRow row;
        row.iteration = t;
        row.attack_loss = loss_val;
        row.lr = step;
        fill_metrics(row, x, ground_truth);
        if (snapshot_due(t, cfg.snapshot_every, cfg.max_iterations)) trc.snapshots.emplace(t, x);

        if (!std::isfinite(loss_val)) {
            trc.aborted = true;
            trc.abort_reason = "non-finite attack loss at iteration " + std::to_string(t);
        } else {
            std::vector<ag::NodePtr<T>> wanted{xp};
            auto grads = ag::backward(loss, &wanted);
            auto gxn = ag::grad_of(grads, xp);
            const Tensor<T>& gx = gxn->value;
            if (!gx.all_finite()) {
                trc.aborted = true;
                trc.abort_reason = "non-finite input gradient at iteration " + std::to_string(t);
            } else {
                for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] -= T(step) * gx.data[i];
            }
        }
        row.wall_ms = ms_since(t_start);
        trc.rows.push_back(row);
        if (trc.aborted) break;
    }

    trc.final_image = x;
    finalize_peak(trc);
    return trc;
}

// ---------------------------------------------------------------------------
// GGDM fine-tuning. batched_attack is the one real implementation; with
// batch_size b the loss compares the mean of the b per-label generated
// gradients against the mean of the b leaked gradients. All slots share the
// one latent, so each iteration still runs a single generation chain.
//
// The leaked mean is reduced to a canonical unit direction before the loop
// (float-rounded elementwise quotient by a long-double norm), so rescaling
// every leaked gradient by any c > 0 leaves the run bit-identical: the cosine
// objective never saw the scale in the first place.
// ---------------------------------------------------------------------------

template <class T>
std::pair<FinetunedModelHandle<T>, std::vector<AttackTrace<T>>> batched_attack(
    const std::vector<GradientVector<T>>& targets, const TargetModel<T>& model,
    const std::vector<std::size_t>& labels, const DiffusionModel<T>& diffusion,
    const LatentRecord<T>& latent, const NoiseSchedule& sched, const AttackConfig& cfg,
    const std::vector<Tensor<T>>& ground_truth = {}, const std::string& target_id = "target") {
    using namespace attack_detail;
    if (cfg.method != AttackMethod::ggdm)
        throw ConfigError("batched_attack: config method is not ggdm");
    validate_attack_config(cfg);
    if (targets.empty()) throw ConfigError("batched_attack: empty target list");
    if (targets.size() != cfg.batch_size)
        throw ConfigError("batched_attack: batch_size disagrees with the target count");
    if (labels.size() != targets.size())
        throw ConfigError("batched_attack: need one label per target");
    if (!ground_truth.empty() && ground_truth.size() != targets.size())
        throw ConfigError("batched_attack: need one ground truth per target, or none");
    if (cfg.sampler.kind != "ddim")
        throw ConfigError("batched_attack: fine-tuning needs the deterministic ddim sampler");
    validate_sampler(cfg.sampler, sched);
    for (const auto& g : targets) require_model_layout(g, model, "batched_attack");
    for (std::size_t l : labels)
        if (l >= model.num_classes) throw LabelError("batched_attack: label out of range");

    const std::size_t b = targets.size();
    GradientVector<T> mean_leaked = targets[0];
    for (std::size_t i = 1; i < b; ++i) {
        require_same_layout(mean_leaked, targets[i], "batched_attack");
        for (std::size_t j = 0; j < mean_leaked.size(); ++j)
            mean_leaked.values[j] += targets[i].values[j];
    }
    const T invb = T(1.0 / double(b));
    for (auto& v : mean_leaked.values) v *= invb;
    const GradientVector<T> canon = canonical_unit_direction(mean_leaked);
    auto tgt = gradient_as_const(canon);

    std::map<std::string, Tensor<T>> theta_hat = diffusion.theta;
    Adam<T> opt;
    std::vector<AttackTrace<T>> traces(b);
    for (auto& trc : traces) trc.rows.reserve(std::size_t(cfg.max_iterations));
    bool aborted = false;
    std::string abort_reason;

    for (long t = 1; t <= cfg.max_iterations && !aborted; ++t) {
        const auto t_start = std::chrono::steady_clock::now();
        const double lr = cfg.eta * std::pow(cfg.gamma, double(t - 1));

        std::map<std::string, ag::NodePtr<T>> th;
        for (const auto& [name, w] : theta_hat) th.emplace(name, ag::param<T>(w));
        auto x_unit = to_unit_range_node(generate_node(diffusion, th, latent, cfg.sampler, sched));

        auto wn = weights_as_params(model);
        ag::NodePtr<T> acc;
        for (std::size_t i = 0; i < b; ++i) {
            auto gg = build_gradient_graph(model, x_unit, labels[i], wn);
            acc = i ? ag::add(acc, gg.flat_grad) : gg.flat_grad;
        }
        auto mean_gen = ag::mul_const(acc, 1.0 / double(b));
        auto cl = cosine_loss_node(mean_gen, tgt);
        if (!(double(cl.gen_norm_sq->value[0]) > 0.0))
            throw ZeroNormGradient("ggdm: generated image yields a zero gradient at iteration " +
                                   std::to_string(t));
        const double loss_val = double(cl.loss->value[0]);

        std::vector<TraceRow> pending(b);
        const Tensor<T>& x_img = x_unit->value;
        for (std::size_t i = 0; i < b; ++i) {
            pending[i].iteration = t;
            pending[i].attack_loss = loss_val;
            pending[i].lr = lr;
            fill_metrics(pending[i], x_img, ground_truth.empty() ? nullptr : &ground_truth[i]);
        }
        if (snapshot_due(t, cfg.snapshot_every, cfg.max_iterations))
            for (auto& trc : traces) trc.snapshots.emplace(t, x_img);

        if (!std::isfinite(loss_val)) {
            aborted = true;
            abort_reason = "non-finite attack loss at iteration " + std::to_string(t);
        } else {
            std::vector<ag::NodePtr<T>> wanted;
            wanted.reserve(th.size());
            for (const auto& [name, node] : th) wanted.push_back(node);
            auto grads = ag::backward(cl.loss, &wanted);
            std::map<std::string, Tensor<T>> gm;
            for (const auto& [name, node] : th) {
                Tensor<T> g = ag::grad_of(grads, node)->value;
                if (!g.all_finite()) {
                    aborted = true;
                    abort_reason = "non-finite parameter gradient at iteration " + std::to_string(t);
                    break;
                }
                gm.emplace(name, std::move(g));
            }
            if (!aborted) opt.step(theta_hat, gm, lr);
        }
        const double wall = ms_since(t_start);
        for (std::size_t i = 0; i < b; ++i) {
            pending[i].wall_ms = wall;
            traces[i].rows.push_back(pending[i]);
        }
    }

    FinetunedModelHandle<T> handle{theta_hat, target_id, cfg};
    if (!aborted) {
        DiffusionModel<T> tuned{diffusion.base, diffusion.image_chw, theta_hat};
        Tensor<T> fin = to_unit_range(generate(tuned, latent, cfg.sampler, sched));
        for (auto& trc : traces) trc.final_image = fin;
    }
    for (auto& trc : traces) {
        trc.aborted = aborted;
        trc.abort_reason = abort_reason;
        finalize_peak(trc);
    }
    return {std::move(handle), std::move(traces)};
}

template <class T>
std::pair<FinetunedModelHandle<T>, AttackTrace<T>> ggdm_finetune(
    const GradientVector<T>& target_grad, const TargetModel<T>& model, std::size_t label,
    const DiffusionModel<T>& diffusion, const LatentRecord<T>& latent, const NoiseSchedule& sched,
    const AttackConfig& cfg, const Tensor<T>* ground_truth = nullptr,
    const std::string& target_id = "target") {
    if (cfg.batch_size != 1)
        throw ConfigError("ggdm_finetune: single-target entry point needs batch_size 1");
    std::vector<Tensor<T>> gts;
    if (ground_truth) gts.push_back(*ground_truth);
    auto [handle, traces] = batched_attack<T>({target_grad}, model, {label}, diffusion, latent,
                                              sched, cfg, gts, target_id);
    return {std::move(handle), std::move(traces[0])};
}

// One deterministic DDIM generation under the fine-tuned parameters. Equal to
// the producing trace's final_image bit for bit.
template <class T>
Tensor<T> reconstruct(const FinetunedModelHandle<T>& handle, const LatentRecord<T>& latent,
                      const SamplerSpec& spec, const NoiseSchedule& sched) {
    const SamplerSpec& hs = handle.config.sampler;
    if (spec.kind != hs.kind || spec.s_for != hs.s_for || spec.s_gen != hs.s_gen ||
        spec.t0 != hs.t0)
        throw SamplerSpecError("reconstruct: sampler disagrees with the fine-tuning run");
    auto it = handle.theta_hat.find("b00.enc0.w");
    if (it == handle.theta_hat.end())
        throw ConfigError("reconstruct: handle has no diffusion parameters");
    DiffusionModel<T> m{it->second.shape[0], latent.latent.shape, handle.theta_hat};
    return to_unit_range(generate(m, latent, spec, sched));
}

} // namespace gleak

#endif
