#ifndef GLEAK_RUNNER_HPP
#define GLEAK_RUNNER_HPP

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gleak/attack.hpp"
#include "gleak/config.hpp"
#include "gleak/dataset.hpp"
#include "gleak/diffusion.hpp"
#include "gleak/errors.hpp"
#include "gleak/gradient.hpp"
#include "gleak/metrics.hpp"
#include "gleak/model.hpp"
#include "gleak/plot.hpp"
#include "gleak/png_io.hpp"
#include "gleak/rng.hpp"
#include "gleak/tensor.hpp"

// Experiment orchestration. run() drives one configured experiment end to
// end and leaves a self-contained run directory:
//
//   config.txt     exact configuration, reparseable
//   trace.csv      per-iteration table (fixed 8 columns)
//   summary.json   final/peak metrics and run identity; wall-clock free
//   timing.json    wall-clock phases (the only nondeterministic artifact)
//   recon_*.png    snapshots; final.png the post-run reconstruction
//   aux/           reference/target images, leaked gradient, latent, extras
//
// Determinism contract: with a fixed config (and ddim sampling) every file
// except timing.json and the wall_ms trace column is byte-identical across
// reruns. traces_match_modulo_wall() is the canonical comparison.

namespace gleak::runner {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct TimingReport {
    double latent_precompute_s = 0.0;
    double per_iteration_s = 0.0;
    double total_finetune_s = 0.0;
    double forward_s = 0.0;
    double generate_s = 0.0;
    bool complete = true; // false when a phase was absent on re-read
};

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

inline ordered_json timing_to_json(const TimingReport& t) {
    ordered_json j;
    j["latent_precompute_s"] = t.latent_precompute_s;
    j["per_iteration_s"] = t.per_iteration_s;
    j["total_finetune_s"] = t.total_finetune_s;
    j["forward_s"] = t.forward_s;
    j["generate_s"] = t.generate_s;
    return j;
}

inline TimingReport timing_from_json(const ordered_json& j) {
    TimingReport t;
    auto grab = [&](const char* key, double& into) {
        if (j.contains(key) && j[key].is_number()) {
            into = j[key].get<double>();
        } else {
            t.complete = false;
        }
    };
    grab("latent_precompute_s", t.latent_precompute_s);
    grab("per_iteration_s", t.per_iteration_s);
    grab("total_finetune_s", t.total_finetune_s);
    grab("forward_s", t.forward_s);
    grab("generate_s", t.generate_s);
    return t;
}

inline TimingReport read_timing(const fs::path& run_dir) {
    std::ifstream in(run_dir / "timing.json");
    if (!in) throw IoError("no timing.json under '" + run_dir.string() + "'");
    ordered_json j;
    in >> j;
    return timing_from_json(j);
}

// ---------------------------------------------------------------------------
// Trace table io
// ---------------------------------------------------------------------------

inline constexpr const char* kTraceHeader =
    "iteration,attack_loss,lr,mse,ssim,psnr,lpips_lite,wall_ms";

inline std::string trace_to_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream out;
    out << kTraceHeader << "\n";
    char buf[64];
    auto put = [&](double v, char sep) {
        std::snprintf(buf, sizeof buf, "%.10g%c", v, sep);
        out << buf;
    };
    for (const auto& r : rows) {
        out << r.iteration << ",";
        put(r.attack_loss, ',');
        put(r.lr, ',');
        put(r.mse, ',');
        put(r.ssim, ',');
        put(r.psnr, ',');
        put(r.lpips_lite, ',');
        put(r.wall_ms, '\n');
    }
    return out.str();
}

inline std::vector<TraceRow> parse_trace_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kTraceHeader)
        throw IoError("trace table: bad or missing header");
    std::vector<TraceRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        f.push_back(cur);
        if (f.size() != 8) throw IoError("trace table: expected 8 columns");
        TraceRow r;
        r.iteration = std::strtol(f[0].c_str(), nullptr, 10);
        r.attack_loss = std::strtod(f[1].c_str(), nullptr);
        r.lr = std::strtod(f[2].c_str(), nullptr);
        r.mse = std::strtod(f[3].c_str(), nullptr);
        r.ssim = std::strtod(f[4].c_str(), nullptr);
        r.psnr = std::strtod(f[5].c_str(), nullptr);
        r.lpips_lite = std::strtod(f[6].c_str(), nullptr);
        r.wall_ms = std::strtod(f[7].c_str(), nullptr);
        rows.push_back(r);
    }
    return rows;
}

inline std::string read_text_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open '" + p.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + p.string() + "'");
}

// Byte comparison of two trace tables with the wall_ms column cut off each
// line. Wall clock is real time and the one column reruns cannot reproduce.
inline bool traces_match_modulo_wall(const std::string& a, const std::string& b) {
    auto strip = [](const std::string& text) {
        std::istringstream in(text);
        std::string line, out;
        while (std::getline(in, line)) {
            const std::size_t cut = line.rfind(',');
            out += line.substr(0, cut);
            out += '\n';
        }
        return out;
    };
    return strip(a) == strip(b);
}

// ---------------------------------------------------------------------------
// Binary artifacts: leaked gradients and latents
// ---------------------------------------------------------------------------

template <class T>
void save_gradient(const GradientVector<T>& g, const std::string& path) {
    auto os = io::open_out(path);
    io::put_string(os, "gleak-gradient-v1");
    io::put_u64(os, g.layout.size());
    for (const auto& e : g.layout) {
        io::put_string(os, e.name);
        io::put_u64(os, e.shape.size());
        for (std::size_t d : e.shape) io::put_u64(os, d);
    }
    io::put_u64(os, g.values.size());
    for (const T& v : g.values) io::put_f64(os, double(v));
    if (!os) throw IoError("failed writing '" + path + "'");
}

template <class T>
GradientVector<T> load_gradient(const std::string& path) {
    auto is = io::open_in(path);
    if (io::get_string(is) != "gleak-gradient-v1")
        throw IoError("'" + path + "' is not a gradient file");
    GradientVector<T> g;
    const std::size_t entries = io::get_u64(is);
    g.layout.resize(entries);
    for (auto& e : g.layout) {
        e.name = io::get_string(is);
        e.shape.resize(io::get_u64(is));
        for (auto& d : e.shape) d = io::get_u64(is);
    }
    g.values.resize(io::get_u64(is));
    for (auto& v : g.values) v = T(io::get_f64(is));
    if (!is) throw IoError("truncated gradient file '" + path + "'");
    return g;
}

template <class T>
void save_latent(const LatentRecord<T>& rec, const std::string& path) {
    auto os = io::open_out(path);
    io::put_string(os, "gleak-latent-v1");
    io::put_u64(os, rec.t0);
    io::put_u64(os, rec.noise_seed);
    io::put_string(os, rec.source_id);
    io::put_u64(os, rec.forward_steps_used.size());
    for (std::size_t s : rec.forward_steps_used) io::put_u64(os, s);
    io::put_u64(os, rec.latent.ndim());
    for (std::size_t d : rec.latent.shape) io::put_u64(os, d);
    for (const T& v : rec.latent.data) io::put_f64(os, double(v));
    if (!os) throw IoError("failed writing '" + path + "'");
}

template <class T>
LatentRecord<T> load_latent(const std::string& path) {
    auto is = io::open_in(path);
    if (io::get_string(is) != "gleak-latent-v1")
        throw IoError("'" + path + "' is not a latent file");
    LatentRecord<T> rec;
    rec.t0 = io::get_u64(is);
    rec.noise_seed = io::get_u64(is);
    rec.source_id = io::get_string(is);
    rec.forward_steps_used.resize(io::get_u64(is));
    for (auto& s : rec.forward_steps_used) s = io::get_u64(is);
    std::vector<std::size_t> shape(io::get_u64(is));
    for (auto& d : shape) d = io::get_u64(is);
    rec.latent = Tensor<T>(shape);
    for (auto& v : rec.latent.data) v = T(io::get_f64(is));
    if (!is) throw IoError("truncated latent file '" + path + "'");
    return rec;
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

struct RunResult {
    fs::path dir;
    bool ok = false;
    std::string error_stage, error_message;
    double final_mse = std::numeric_limits<double>::quiet_NaN();
    double final_attack_loss = std::numeric_limits<double>::quiet_NaN();
    double peak_mse = std::numeric_limits<double>::quiet_NaN();
    long peak_iteration = 0;
    ordered_json summary;
};

inline std::string default_run_name(const RunConfig& cfg) {
    const std::string s = serialize_config(cfg);
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    for (unsigned char c : s) h = splitmix64(h ^ c);
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%016llx", (unsigned long long)h);
    return buf;
}

// non-finite doubles have no json representation; keep them readable
inline ordered_json json_real(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline ordered_json row_to_json(const TraceRow& r) {
    ordered_json j;
    j["iteration"] = r.iteration;
    j["attack_loss"] = json_real(r.attack_loss);
    j["lr"] = json_real(r.lr);
    j["mse"] = json_real(r.mse);
    j["ssim"] = json_real(r.ssim);
    j["psnr"] = json_real(r.psnr);
    j["lpips_lite"] = json_real(r.lpips_lite);
    return j;
}

template <class T>
struct PreparedStack {
    std::vector<LabeledExample<T>> dataset;
    TargetModel<T> model;
    NoiseSchedule sched;
    SamplerSpec spec;
};

template <class T>
PreparedStack<T> prepare_stack(const RunConfig& cfg) {
    PreparedStack<T> st;
    const std::size_t H = std::size_t(cfg.image_height), W = std::size_t(cfg.image_width),
                      C = std::size_t(cfg.image_channels);
    if (cfg.dataset_kind == "synthetic-shapes") {
        st.dataset = make_synthetic_dataset<T>(std::size_t(cfg.dataset_size), H, W, C,
                                               cfg.master_seed);
    } else {
        st.dataset = load_image_folder<T>(cfg.dataset_path, H, W);
    }
    st.model = make_target_model<T>(cfg.target_arch, H, W, C, std::size_t(cfg.num_classes),
                                    cfg.master_seed);
    st.sched = make_schedule(std::size_t(cfg.schedule_steps), cfg.beta_start, cfg.beta_end);
    st.spec = SamplerSpec{cfg.sampler_kind, std::size_t(cfg.s_for), std::size_t(cfg.s_gen),
                          std::size_t(cfg.t0), derive_seed(cfg.master_seed, {stream::sampler})};
    return st;
}

// Train a fresh diffusion model, or load the configured checkpoint; when the
// checkpoint path is set but absent, train once and save it there.
template <class T>
DiffusionModel<T> prepare_diffusion(const RunConfig& cfg, const PreparedStack<T>& st,
                                    std::vector<double>* curve_out = nullptr) {
    const std::size_t H = std::size_t(cfg.image_height), W = std::size_t(cfg.image_width),
                      C = std::size_t(cfg.image_channels);
    if (!cfg.diffusion_checkpoint.empty() && fs::exists(cfg.diffusion_checkpoint)) {
        DiffusionModel<T> m = load_diffusion_model<T>(cfg.diffusion_checkpoint);
        if (m.image_chw != std::vector<std::size_t>{C, H, W})
            throw ConfigError("checkpoint '" + cfg.diffusion_checkpoint +
                              "' was built for a different image size");
        if (m.base != std::size_t(cfg.diffusion_base_width))
            throw ConfigError("checkpoint '" + cfg.diffusion_checkpoint +
                              "' was built with a different base width");
        return m;
    }
    DiffusionModel<T> m =
        make_diffusion_model<T>(H, W, C, std::size_t(cfg.diffusion_base_width), cfg.master_seed);
    std::vector<Tensor<T>> signed_set;
    signed_set.reserve(st.dataset.size());
    for (const auto& ex : st.dataset) signed_set.push_back(to_signed_range(ex.image));
    auto curve = train_diffusion(m, signed_set, st.sched, std::size_t(cfg.diffusion_train_steps),
                                 std::size_t(cfg.diffusion_batch), cfg.diffusion_lr,
                                 cfg.master_seed);
    if (curve_out) *curve_out = curve;
    if (!cfg.diffusion_checkpoint.empty()) save_diffusion_model(m, cfg.diffusion_checkpoint);
    return m;
}

template <class T>
RunResult run(const RunConfig& cfg, const std::string& dir_name = "") {
    validate_config(cfg);
    const fs::path dir =
        fs::path(cfg.output_dir) / (dir_name.empty() ? default_run_name(cfg) : dir_name);
    RunResult res;
    res.dir = dir;
    ordered_json summary;
    summary["format"] = "gleak-run-summary-v1";
    TimingReport tim;
    std::string stage = "setup";
    try {
        fs::create_directories(dir / "aux");
        save_config(cfg, (dir / "config.txt").string());

        const bool is_ggdm = cfg.attack_method == "ggdm";
        const bool is_attack = cfg.run_mode == "attack";
        const std::size_t b = std::size_t(cfg.batch_size);
        if (is_attack && !is_ggdm && b != 1)
            throw ConfigError("attack.batch_size > 1 needs attack.method = ggdm");

        stage = "dataset";
        PreparedStack<T> st = prepare_stack<T>(cfg);
        const std::size_t n = st.dataset.size();
        const std::size_t tgt0 = std::size_t(cfg.target_index);
        const std::size_t refi = std::size_t(cfg.reference_index);
        if (refi >= n) throw ConfigError("dataset.reference_index beyond dataset");
        if (is_attack && tgt0 + b > n)
            throw ConfigError("dataset.target_index + batch_size beyond dataset");

        summary["run"] = {{"mode", cfg.run_mode},
                          {"method", cfg.attack_method},
                          {"precision", cfg.precision},
                          {"master_seed", cfg.master_seed},
                          {"arch", cfg.target_arch},
                          {"image", {cfg.image_height, cfg.image_width, cfg.image_channels}},
                          {"dataset_size", n},
                          {"target_index", cfg.target_index},
                          {"reference_index", cfg.reference_index},
                          {"batch_size", cfg.batch_size}};
        summary["sampler"] = {{"kind", cfg.sampler_kind},
                              {"s_for", cfg.s_for},
                              {"s_gen", cfg.s_gen},
                              {"t0", cfg.t0}};
        summary["defense"] = {{"family", cfg.defense_family},
                              {"variance", json_real(cfg.defense_variance)}};

        // leaked gradients, defense noise applied per slot
        std::vector<GradientVector<T>> targets;
        std::vector<std::size_t> labels;
        std::vector<Tensor<T>> gts;
        if (is_attack) {
            stage = "leak";
            Timer fwd;
            targets.push_back(compute_gradient(st.model, st.dataset[tgt0]));
            tim.forward_s = fwd.seconds();
            for (std::size_t i = 1; i < b; ++i)
                targets.push_back(compute_gradient(st.model, st.dataset[tgt0 + i]));
            for (std::size_t i = 0; i < b; ++i) {
                labels.push_back(st.dataset[tgt0 + i].label);
                gts.push_back(st.dataset[tgt0 + i].image);
            }
            if (cfg.defense_family != "none") {
                for (std::size_t i = 0; i < b; ++i) {
                    NoiseSpec spec{noise_family_from_string(cfg.defense_family),
                                   cfg.defense_variance, 0.0,
                                   derive_seed(cfg.master_seed, {stream::noise, std::uint64_t(i)})};
                    targets[i] = add_noise(targets[i], spec);
                }
            }
            save_gradient(targets[0], (dir / "aux" / "leaked_gradient.bin").string());
            pngio::write_image((dir / "aux" / "target.png").string(), st.dataset[tgt0].image);
            summary["run"]["label"] = labels[0];
        }
        pngio::write_image((dir / "aux" / "reference.png").string(), st.dataset[refi].image);

        const bool needs_diffusion = !is_attack || is_ggdm;
        DiffusionModel<T> dm;
        LatentRecord<T> latent;
        if (needs_diffusion) {
            stage = "diffusion";
            std::vector<double> curve;
            dm = prepare_diffusion<T>(cfg, st, &curve);
            summary["diffusion"] = {{"base_width", cfg.diffusion_base_width},
                                    {"train_steps", cfg.diffusion_train_steps},
                                    {"checkpoint", cfg.diffusion_checkpoint},
                                    {"trained_here", !curve.empty()}};
            if (!curve.empty()) {
                summary["diffusion"]["train_loss_first"] = json_real(curve.front());
                summary["diffusion"]["train_loss_last"] = json_real(curve.back());
            }

            stage = "latent";
            Timer lt;
            latent = precompute_latent(dm, to_signed_range(st.dataset[refi].image), st.spec,
                                       st.sched, cfg.master_seed,
                                       "example-" + std::to_string(refi));
            tim.latent_precompute_s = lt.seconds();
            save_latent(latent, (dir / "aux" / "latent.bin").string());
        }

        // the experiment itself
        std::vector<AttackTrace<T>> traces;
        if (!is_attack) {
            stage = "roundtrip";
            Timer gen;
            Tensor<T> x = to_unit_range(generate(dm, latent, st.spec, st.sched));
            tim.generate_s = gen.seconds();
            AttackTrace<T> trc;
            TraceRow row;
            row.iteration = 1;
            attack_detail::fill_metrics(row, x, &st.dataset[refi].image);
            row.wall_ms = tim.generate_s * 1000.0;
            trc.rows.push_back(row);
            trc.snapshots.emplace(1, x);
            trc.final_image = x;
            attack_detail::finalize_peak(trc);
            traces.push_back(std::move(trc));
        } else if (!is_ggdm) {
            stage = "attack";
            AttackConfig acfg;
            acfg.method = AttackMethod::dlg;
            acfg.max_iterations = cfg.max_iterations;
            acfg.eta = cfg.eta;
            acfg.gamma = cfg.gamma;
            acfg.batch_size = 1;
            acfg.snapshot_every = cfg.snapshot_every;
            acfg.dlg_step = cfg.dlg_step;
            acfg.seed = cfg.master_seed;
            traces.push_back(dlg_attack(targets[0], st.model, labels[0], acfg, &gts[0]));
        } else {
            stage = "attack";
            AttackConfig acfg;
            acfg.method = AttackMethod::ggdm;
            acfg.max_iterations = cfg.max_iterations;
            acfg.eta = cfg.eta;
            acfg.gamma = cfg.gamma;
            acfg.sampler = st.spec;
            acfg.batch_size = b;
            acfg.snapshot_every = cfg.snapshot_every;
            acfg.seed = cfg.master_seed;
            auto [handle, trs] =
                batched_attack<T>(targets, st.model, labels, dm, latent, st.sched, acfg, gts,
                                  "example-" + std::to_string(tgt0));
            traces = std::move(trs);
            if (!traces[0].aborted) {
                Timer gen;
                Tensor<T> again = reconstruct(handle, latent, st.spec, st.sched);
                tim.generate_s = gen.seconds();
                (void)again;
            }
        }

        stage = "trace";
        const AttackTrace<T>& primary = traces[0];
        if (primary.rows.empty()) throw Error("run produced an empty trace");
        write_text_file(dir / "trace.csv", trace_to_csv(primary.rows));
        for (std::size_t i = 1; i < traces.size(); ++i)
            write_text_file(dir / "aux" / ("trace_slot" + std::to_string(i) + ".csv"),
                            trace_to_csv(traces[i].rows));
        for (const auto& [it, img] : primary.snapshots) {
            char name[32];
            std::snprintf(name, sizeof name, "recon_%06ld.png", it);
            pngio::write_image((dir / name).string(), img);
        }
        if (primary.final_image.numel() > 0)
            pngio::write_image((dir / "final.png").string(), primary.final_image);

        stage = "summary";
        double wall_total_ms = 0.0;
        for (const auto& r : primary.rows) wall_total_ms += r.wall_ms;
        tim.total_finetune_s = wall_total_ms / 1000.0;
        tim.per_iteration_s = wall_total_ms / 1000.0 / double(primary.rows.size());

        summary["attack"] = {{"max_iterations", cfg.max_iterations},
                             {"eta", json_real(cfg.eta)},
                             {"gamma", json_real(cfg.gamma)},
                             {"snapshot_every", cfg.snapshot_every},
                             {"dlg_step", json_real(cfg.dlg_step)}};
        summary["rows"] = primary.rows.size();
        summary["final"] = row_to_json(primary.rows.back());
        summary["peak"] = {{"iteration", primary.peak.iteration},
                           {"mse", json_real(primary.peak.mse)}};
        summary["aborted"] = primary.aborted;
        if (primary.aborted) summary["abort_reason"] = primary.abort_reason;
        if (traces.size() > 1) {
            ordered_json slots = ordered_json::array();
            for (const auto& tr : traces) {
                slots.push_back({{"final_mse", json_real(tr.rows.back().mse)},
                                 {"peak_iteration", tr.peak.iteration},
                                 {"peak_mse", json_real(tr.peak.mse)}});
            }
            summary["slots"] = std::move(slots);
        }
        summary["snapshots"] = primary.snapshots.size();

        stage = "timing";
        write_text_file(dir / "timing.json", timing_to_json(tim).dump(2) + "\n");
        write_text_file(dir / "summary.json", summary.dump(2) + "\n");

        res.ok = true;
        res.final_mse = primary.rows.back().mse;
        res.final_attack_loss = primary.rows.back().attack_loss;
        res.peak_mse = primary.peak.mse;
        res.peak_iteration = primary.peak.iteration;
    } catch (const std::exception& e) {
        res.error_stage = stage;
        res.error_message = e.what();
        summary["error"] = {{"stage", stage}, {"message", e.what()}};
        try {
            fs::create_directories(dir);
            write_text_file(dir / "summary.json", summary.dump(2) + "\n");
            write_text_file(dir / "timing.json", timing_to_json(tim).dump(2) + "\n");
        } catch (...) {
            // partial outputs stay partial
        }
    }
    res.summary = std::move(summary);
    return res;
}

// Required artifacts of a completed run directory.
inline bool run_dir_complete(const fs::path& dir, std::string* why = nullptr) {
    auto missing = [&](const char* what) {
        if (why) *why = std::string("missing ") + what;
        return false;
    };
    if (!fs::exists(dir / "config.txt")) return missing("config.txt");
    if (!fs::exists(dir / "trace.csv")) return missing("trace.csv");
    if (!fs::exists(dir / "summary.json")) return missing("summary.json");
    if (!fs::exists(dir / "timing.json")) return missing("timing.json");
    bool snap = false;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("recon_", 0) == 0 && e.path().extension() == ".png") snap = true;
    }
    if (!snap) return missing("recon_*.png snapshot");
    return true;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    std::string axis_value;
    RunResult result;
};

inline std::string sanitize_token(const std::string& s) {
    std::string out;
    for (char c : s) out += (std::isalnum((unsigned char)c) || c == '.' || c == '-') ? c : '_';
    return out;
}

inline std::string sweep_table_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
    std::ostringstream out;
    out << "axis,value,status,error_stage,final_attack_loss,final_mse,peak_iteration,peak_mse\n";
    char buf[64];
    auto put = [&](double v, char sep) {
        std::snprintf(buf, sizeof buf, "%.10g%c", v, sep);
        out << buf;
    };
    for (const auto& r : rows) {
        out << axis << "," << r.axis_value << "," << (r.result.ok ? "ok" : "failed") << ","
            << r.result.error_stage << ",";
        put(r.result.final_attack_loss, ',');
        put(r.result.final_mse, ',');
        out << r.result.peak_iteration << ",";
        put(r.result.peak_mse, '\n');
    }
    return out.str();
}

template <class T>
std::vector<SweepRow> sweep(const SweepSpec& spec) {
    const std::size_t n = spec.values.size();
    if (n == 0) throw ConfigError("sweep: no axis values");
    const fs::path root = fs::path(spec.base.output_dir) / ("sweep-" + sanitize_token(spec.axis));
    fs::create_directories(root);

    std::vector<SweepRow> rows(n);
    std::vector<RunConfig> cfgs(n);
    std::vector<bool> viable(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        rows[i].axis_value = spec.values[i];
        try {
            cfgs[i] = apply_axis_value(spec.base, spec.axis, spec.values[i]);
            cfgs[i].output_dir = root.string();
            cfgs[i].workers = 1;
            viable[i] = true;
        } catch (const std::exception& e) {
            rows[i].result.error_stage = "config";
            rows[i].result.error_message = e.what();
        }
    }

    const std::size_t workers = std::min<std::size_t>(std::size_t(spec.base.workers), n);
    auto work = [&](std::size_t i) {
        if (!viable[i]) return;
        rows[i].result = run<T>(cfgs[i], "val-" + sanitize_token(spec.values[i]));
    };
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) work(i);
    } else {
        // threads own whole runs; kernels drop to serial so the bitwise
        // results cannot depend on the worker count
        kern::Par old = kern::par_mode();
        kern::par_mode() = kern::Par::serial;
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) work(i);
            });
        for (auto& th : pool) th.join();
        kern::par_mode() = old;
    }

    write_text_file(root / "table.csv", sweep_table_csv(spec.axis, rows));
    return rows;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline void render_report(const fs::path& run_dir) {
    const auto rows = parse_trace_csv(read_text_file(run_dir / "trace.csv"));
    plot::Series loss{"attack_loss", {}}, mse{"mse", {}}, lp{"lpips_lite", {}};
    bool loss_pos = true;
    for (const auto& r : rows) {
        loss.y.push_back(r.attack_loss);
        mse.y.push_back(r.mse);
        lp.y.push_back(r.lpips_lite);
        loss_pos = loss_pos && r.attack_loss > 0.0;
    }
    plot::render_curves((run_dir / "loss_curve.png").string(), "attack loss", {loss}, loss_pos);
    plot::render_curves((run_dir / "mse_curve.png").string(), "reconstruction error", {mse, lp},
                        false);
}

} // namespace gleak::runner

#endif
