#ifndef GLEAK_CONFIG_HPP
#define GLEAK_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "gleak/errors.hpp"

// Run configuration: a flat text format of dotted keys, one `key = value` per
// line, '#' comments. Unknown keys are errors; omitted keys take defaults.
// serialize_config writes every key in schema order, and doubles round-trip
// exactly, so saved configs rebuild identical runs.

namespace gleak {

struct RunConfig {
    std::string run_mode = "attack"; // attack | roundtrip

    std::string dataset_kind = "synthetic-shapes"; // synthetic-shapes | image-folder
    std::string dataset_path;                      // image-folder only
    long dataset_size = 64;
    long target_index = 0;    // example whose gradient leaks
    long reference_index = 0; // example seeding the latent

    long image_height = 16;
    long image_width = 16;
    long image_channels = 3;

    std::string target_arch = "dlg-lenet"; // dlg-lenet | linear
    long num_classes = 2;

    long diffusion_train_steps = 1500;
    long diffusion_batch = 8;
    double diffusion_lr = 2e-3;
    long diffusion_base_width = 16;
    std::string diffusion_checkpoint; // load if present, else train and save

    long schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    std::string sampler_kind = "ddim"; // ddim | ddpm
    long s_for = 40;
    long s_gen = 6;
    long t0 = 500;

    std::string attack_method = "ggdm"; // ggdm | dlg
    long max_iterations = 200;
    double eta = 2e-4;
    double gamma = 0.98;
    long batch_size = 1;
    long snapshot_every = 10;
    double dlg_step = 0.0; // 0 = per-arch default

    std::string defense_family = "none"; // none | gaussian | laplacian
    double defense_variance = 0.0;

    std::uint64_t master_seed = 1;
    std::string output_dir = "runs";
    std::string precision = "double"; // double | single
    long workers = 1;
};

struct SweepSpec {
    std::string axis; // t0 | s_for_s_gen | eta | gamma | batch_size | epochs_K
    std::vector<std::string> values;
    RunConfig base;
};

struct ConfigKeyDoc {
    std::string key, type, default_value, help;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::string& path);
void validate_config(const RunConfig& cfg); // cross-field checks

SweepSpec parse_sweep_text(const std::string& text);
SweepSpec load_sweep_config(const std::string& path);
// one axis value applied onto a copy of the base config
RunConfig apply_axis_value(const RunConfig& base, const std::string& axis,
                           const std::string& value);

std::vector<ConfigKeyDoc> config_schema_docs();

} // namespace gleak

#endif
