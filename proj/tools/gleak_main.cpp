// Command line driver. Subcommands cover the whole pipeline: denoiser
// training, attack / round-trip runs, defended runs, sweeps, reporting and
// standalone image metrics. Global flags override the corresponding config
// keys so scripts can vary seed or output dir without editing files.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gleak/runner.hpp"

namespace {

using namespace gleak;

struct Overrides {
    std::uint64_t seed = 0;
    std::string out, precision;
    long workers = 0;
    bool has_seed = false, has_out = false, has_precision = false, has_workers = false;
};

RunConfig load_with_overrides(const std::string& path, const Overrides& ov) {
    RunConfig cfg = load_config(path);
    if (ov.has_seed) cfg.master_seed = ov.seed;
    if (ov.has_out) cfg.output_dir = ov.out;
    if (ov.has_precision) cfg.precision = ov.precision;
    if (ov.has_workers) cfg.workers = ov.workers;
    validate_config(cfg);
    return cfg;
}

void print_run(const runner::RunResult& res) {
    std::printf("run complete: %s\n", res.dir.string().c_str());
    const auto& fin = res.summary["final"];
    auto num = [](const nlohmann::ordered_json& j) {
        return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN();
    };
    std::printf("  rows %ld  final loss %.6g  mse %.6g  ssim %.6g  psnr %.6g  lpips %.6g\n",
                long(res.summary["rows"].get<std::size_t>()), num(fin["attack_loss"]),
                num(fin["mse"]), num(fin["ssim"]), num(fin["psnr"]), num(fin["lpips_lite"]));
    std::printf("  peak mse %.6g at iteration %ld\n", res.peak_mse, res.peak_iteration);
}

template <class T>
int do_run(const RunConfig& cfg) {
    runner::RunResult res = runner::run<T>(cfg);
    if (!res.ok) {
        std::fprintf(stderr, "gleak: error at stage '%s': %s\n", res.error_stage.c_str(),
                     res.error_message.c_str());
        return 1;
    }
    print_run(res);
    return 0;
}

template <class T>
int do_train_diffusion(const RunConfig& cfg) {
    std::string stage = "setup";
    try {
        if (cfg.diffusion_checkpoint.empty())
            throw ConfigError("train-diffusion needs diffusion.checkpoint set");
        stage = "dataset";
        auto st = runner::prepare_stack<T>(cfg);
        stage = "diffusion";
        auto m = make_diffusion_model<T>(std::size_t(cfg.image_height),
                                         std::size_t(cfg.image_width),
                                         std::size_t(cfg.image_channels),
                                         std::size_t(cfg.diffusion_base_width), cfg.master_seed);
        std::vector<Tensor<T>> signed_set;
        for (const auto& ex : st.dataset) signed_set.push_back(to_signed_range(ex.image));
        auto curve = train_diffusion(m, signed_set, st.sched,
                                     std::size_t(cfg.diffusion_train_steps),
                                     std::size_t(cfg.diffusion_batch), cfg.diffusion_lr,
                                     cfg.master_seed);
        stage = "checkpoint";
        save_diffusion_model(m, cfg.diffusion_checkpoint);
        if (!curve.empty()) {
            bool pos = true;
            for (double v : curve) pos = pos && v > 0.0;
            plot::render_curves(cfg.diffusion_checkpoint + ".curve.png", "denoiser training loss",
                                {{"loss", curve}}, pos);
            std::printf("trained %zu steps: loss %.6g -> %.6g\n", curve.size(), curve.front(),
                        curve.back());
        }
        std::printf("checkpoint written: %s\n", cfg.diffusion_checkpoint.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gleak: error at stage '%s': %s\n", stage.c_str(), e.what());
        return 1;
    }
}

template <class T>
int do_sweep(const SweepSpec& spec) {
    try {
        auto rows = runner::sweep<T>(spec);
        int failed = 0;
        for (const auto& r : rows) {
            if (r.result.ok) {
                std::printf("%s=%s  ok  final mse %.6g  loss %.6g\n", spec.axis.c_str(),
                            r.axis_value.c_str(), r.result.final_mse,
                            r.result.final_attack_loss);
            } else {
                ++failed;
                std::printf("%s=%s  FAILED at '%s': %s\n", spec.axis.c_str(),
                            r.axis_value.c_str(), r.result.error_stage.c_str(),
                            r.result.error_message.c_str());
            }
        }
        std::printf("sweep table: %s\n",
                    (std::filesystem::path(spec.base.output_dir) /
                     ("sweep-" + runner::sanitize_token(spec.axis)) / "table.csv")
                        .string()
                        .c_str());
        return failed == 0 ? 0 : 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gleak: error at stage 'sweep': %s\n", e.what());
        return 1;
    }
}

int do_report(const std::string& dir) {
    try {
        std::string why;
        if (!runner::run_dir_complete(dir, &why))
            throw IoError("run directory incomplete: " + why);
        runner::render_report(dir);
        std::cout << runner::read_text_file(std::filesystem::path(dir) / "summary.json");
        std::printf("plots written: loss_curve.png, mse_curve.png\n");
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gleak: error at stage 'report': %s\n", e.what());
        return 1;
    }
}

int do_metrics(const std::string& a, const std::string& b) {
    try {
        auto ia = pngio::read_image<double>(a);
        auto ib = pngio::read_image<double>(b);
        auto rep = metrics::evaluate(ia, ib, a + " vs " + b, 0);
        std::printf("mse        %.10g\n", rep.mse);
        std::printf("ssim       %.10g\n", rep.ssim);
        std::printf("psnr       %.10g\n", rep.psnr);
        std::printf("lpips_lite %.10g\n", rep.lpips_lite);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gleak: error at stage 'metrics': %s\n", e.what());
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient leakage attacks against a diffusion-prior reconstructor"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides ov;
    auto* oseed = app.add_option("--seed", ov.seed, "override master_seed");
    auto* oout = app.add_option("--out", ov.out, "override output_dir");
    auto* oprec = app.add_option("--precision", ov.precision, "single or double")
                      ->check(CLI::IsMember({"single", "double"}));
    auto* owork = app.add_option("--workers", ov.workers, "sweep worker threads");

    std::string config_path, run_dir, img_a, img_b;
    double variance = 0.0;
    std::string family = "gaussian";

    auto* td = app.add_subcommand("train-diffusion", "train the denoiser, save its checkpoint");
    td->add_option("config", config_path, "configuration file")->required();

    auto* at = app.add_subcommand("attack", "run the configured gradient inversion");
    at->add_option("config", config_path, "configuration file")->required();

    auto* rt = app.add_subcommand("roundtrip", "noise the reference forward, regenerate it");
    rt->add_option("config", config_path, "configuration file")->required();

    auto* df = app.add_subcommand("defend", "attack a noise-defended gradient");
    df->add_option("config", config_path, "configuration file")->required();
    df->add_option("--variance", variance, "noise variance added to the leaked gradient")
        ->required();
    df->add_option("--family", family, "gaussian or laplacian")
        ->check(CLI::IsMember({"gaussian", "laplacian"}));

    auto* sw = app.add_subcommand("sweep", "run one config axis over several values");
    sw->add_option("config", config_path, "sweep configuration file")->required();

    auto* rp = app.add_subcommand("report", "re-render plots and print a run summary");
    rp->add_option("run_dir", run_dir, "run directory")->required();

    auto* mt = app.add_subcommand("metrics", "compare two png images");
    mt->add_option("imageA", img_a, "first image")->required();
    mt->add_option("imageB", img_b, "second image")->required();

    CLI11_PARSE(app, argc, argv);

    ov.has_seed = oseed->count() > 0;
    ov.has_out = oout->count() > 0;
    ov.has_precision = oprec->count() > 0;
    ov.has_workers = owork->count() > 0;

    if (app.got_subcommand(rp)) return do_report(run_dir);
    if (app.got_subcommand(mt)) return do_metrics(img_a, img_b);

    try {
        if (app.got_subcommand(sw)) {
            SweepSpec spec = load_sweep_config(config_path);
            if (ov.has_seed) spec.base.master_seed = ov.seed;
            if (ov.has_out) spec.base.output_dir = ov.out;
            if (ov.has_precision) spec.base.precision = ov.precision;
            if (ov.has_workers) spec.base.workers = ov.workers;
            validate_config(spec.base);
            return spec.base.precision == "single" ? do_sweep<float>(spec)
                                                  : do_sweep<double>(spec);
        }

        RunConfig cfg = load_with_overrides(config_path, ov);
        if (app.got_subcommand(at)) cfg.run_mode = "attack";
        if (app.got_subcommand(rt)) cfg.run_mode = "roundtrip";
        if (app.got_subcommand(df)) {
            cfg.run_mode = "attack";
            cfg.defense_family = family;
            cfg.defense_variance = variance;
            validate_config(cfg);
        }
        const bool single = cfg.precision == "single";
        if (app.got_subcommand(td))
            return single ? do_train_diffusion<float>(cfg) : do_train_diffusion<double>(cfg);
        return single ? do_run<float>(cfg) : do_run<double>(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "gleak: error at stage 'config': %s\n", e.what());
        return 1;
    }
}
