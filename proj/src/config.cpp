#include "gleak/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace gleak {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace((unsigned char)s[a])) ++a;
    while (b > a && std::isspace((unsigned char)s[b - 1])) --b;
    return s.substr(a, b - a);
}

long parse_long(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const long x = std::strtol(v.c_str(), &end, 10);
    if (errno || !end || *end != '\0' || v.empty())
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    return x;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (errno || !end || *end != '\0' || v.empty() || v[0] == '-')
        throw ConfigError("config key '" + key + "': '" + v + "' is not a nonnegative integer");
    return std::uint64_t(x);
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const double x = std::strtod(v.c_str(), &end);
    if (errno || !end || *end != '\0' || v.empty())
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    return x;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Binding {
    const char* key;
    const char* type;
    const char* help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

Binding str_key(const char* key, std::string RunConfig::* f, const char* help) {
    return {key, "string", help, [f](RunConfig& c, const std::string& v) { c.*f = v; },
            [f](const RunConfig& c) { return c.*f; }};
}

Binding long_key(const char* key, long RunConfig::* f, const char* help) {
    return {key, "int", help,
            [f, key](RunConfig& c, const std::string& v) { c.*f = parse_long(key, v); },
            [f](const RunConfig& c) { return std::to_string(c.*f); }};
}

Binding u64_key(const char* key, std::uint64_t RunConfig::* f, const char* help) {
    return {key, "uint", help,
            [f, key](RunConfig& c, const std::string& v) { c.*f = parse_u64(key, v); },
            [f](const RunConfig& c) { return std::to_string(c.*f); }};
}

Binding real_key(const char* key, double RunConfig::* f, const char* help) {
    return {key, "real", help,
            [f, key](RunConfig& c, const std::string& v) { c.*f = parse_double(key, v); },
            [f](const RunConfig& c) { return fmt_double(c.*f); }};
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> b = {
        str_key("run.mode", &RunConfig::run_mode, "attack | roundtrip"),
        str_key("dataset.kind", &RunConfig::dataset_kind, "synthetic-shapes | image-folder"),
        str_key("dataset.path", &RunConfig::dataset_path, "class-subdir png folder (image-folder)"),
        long_key("dataset.size", &RunConfig::dataset_size, "synthetic example count"),
        long_key("dataset.target_index", &RunConfig::target_index, "attacked example"),
        long_key("dataset.reference_index", &RunConfig::reference_index, "latent reference example"),
        long_key("image.height", &RunConfig::image_height, "pixels"),
        long_key("image.width", &RunConfig::image_width, "pixels"),
        long_key("image.channels", &RunConfig::image_channels, "always 3"),
        str_key("target_model.arch", &RunConfig::target_arch, "dlg-lenet | linear"),
        long_key("target_model.classes", &RunConfig::num_classes, "output classes"),
        long_key("diffusion.train_steps", &RunConfig::diffusion_train_steps, "optimizer steps"),
        long_key("diffusion.batch", &RunConfig::diffusion_batch, "training batch size"),
        real_key("diffusion.lr", &RunConfig::diffusion_lr, "training learning rate"),
        long_key("diffusion.base_width", &RunConfig::diffusion_base_width, "unet base channels"),
        str_key("diffusion.checkpoint", &RunConfig::diffusion_checkpoint,
                "model file; loaded if present, else trained and saved"),
        long_key("diffusion.schedule_steps", &RunConfig::schedule_steps, "T"),
        real_key("diffusion.beta_start", &RunConfig::beta_start, "linear schedule start"),
        real_key("diffusion.beta_end", &RunConfig::beta_end, "linear schedule end"),
        str_key("sampler.kind", &RunConfig::sampler_kind, "ddim | ddpm"),
        long_key("sampler.s_for", &RunConfig::s_for, "forward sub-steps"),
        long_key("sampler.s_gen", &RunConfig::s_gen, "generation sub-steps"),
        long_key("sampler.t0", &RunConfig::t0, "return step"),
        str_key("attack.method", &RunConfig::attack_method, "ggdm | dlg"),
        long_key("attack.max_iterations", &RunConfig::max_iterations, "fine-tuning iterations"),
        real_key("attack.eta", &RunConfig::eta, "initial learning rate"),
        real_key("attack.gamma", &RunConfig::gamma, "per-iteration decay"),
        long_key("attack.batch_size", &RunConfig::batch_size, "leaked-gradient batch"),
        long_key("attack.snapshot_every", &RunConfig::snapshot_every, "snapshot period"),
        real_key("attack.dlg_step", &RunConfig::dlg_step, "dlg step size; 0 = arch default"),
        str_key("defense.family", &RunConfig::defense_family, "none | gaussian | laplacian"),
        real_key("defense.variance", &RunConfig::defense_variance, "noise variance"),
        u64_key("master_seed", &RunConfig::master_seed, "all randomness derives from this"),
        str_key("output_dir", &RunConfig::output_dir, "run directories go here"),
        str_key("precision", &RunConfig::precision, "double | single"),
        long_key("workers", &RunConfig::workers, "parallel sweep runs"),
    };
    return b;
}

const Binding* find_binding(const std::string& key) {
    for (const auto& b : bindings())
        if (key == b.key) return &b;
    return nullptr;
}

// shared line walker for config and sweep files
void parse_lines(const std::string& text,
                 const std::function<void(const std::string&, const std::string&, int)>& on_kv) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        on_kv(key, value, lineno);
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    parse_lines(text, [&](const std::string& key, const std::string& value, int lineno) {
        const Binding* b = find_binding(key);
        if (!b)
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        b->set(cfg, value);
    });
    validate_config(cfg);
    return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config_text(read_file(path)); }

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream out;
    for (const auto& b : bindings()) out << b.key << " = " << b.get(cfg) << "\n";
    return out.str();
}

void save_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << serialize_config(cfg);
    if (!out) throw IoError("failed writing '" + path + "'");
}

void validate_config(const RunConfig& cfg) {
    auto want = [](bool ok, const char* msg) {
        if (!ok) throw ConfigError(msg);
    };
    want(cfg.run_mode == "attack" || cfg.run_mode == "roundtrip",
         "run.mode must be attack or roundtrip");
    want(cfg.dataset_kind == "synthetic-shapes" || cfg.dataset_kind == "image-folder",
         "dataset.kind must be synthetic-shapes or image-folder");
    want(cfg.dataset_kind != "image-folder" || !cfg.dataset_path.empty(),
         "dataset.path required for image-folder");
    want(cfg.dataset_size >= 1, "dataset.size must be >= 1");
    want(cfg.target_index >= 0, "dataset.target_index must be >= 0");
    want(cfg.reference_index >= 0, "dataset.reference_index must be >= 0");
    want(cfg.image_height >= 1 && cfg.image_width >= 1, "image size must be positive");
    want(cfg.image_channels == 3, "image.channels must be 3");
    want(cfg.target_arch == "dlg-lenet" || cfg.target_arch == "linear",
         "target_model.arch must be dlg-lenet or linear");
    want(cfg.num_classes >= 2, "target_model.classes must be >= 2");
    want(cfg.diffusion_train_steps >= 0, "diffusion.train_steps must be >= 0");
    want(cfg.diffusion_batch >= 1, "diffusion.batch must be >= 1");
    want(cfg.diffusion_lr > 0, "diffusion.lr must be positive");
    want(cfg.diffusion_base_width >= 2, "diffusion.base_width must be >= 2");
    want(cfg.schedule_steps >= 1, "diffusion.schedule_steps must be >= 1");
    want(cfg.beta_start > 0 && cfg.beta_end < 1 && cfg.beta_start <= cfg.beta_end,
         "need 0 < beta_start <= beta_end < 1");
    want(cfg.sampler_kind == "ddim" || cfg.sampler_kind == "ddpm",
         "sampler.kind must be ddim or ddpm");
    want(cfg.s_for >= 1 && cfg.s_gen >= 1, "sampler sub-step counts must be >= 1");
    want(cfg.t0 >= 1 && cfg.t0 <= cfg.schedule_steps, "sampler.t0 must lie in [1, T]");
    want(cfg.s_for <= cfg.t0 && cfg.s_gen <= cfg.t0, "sampler sub-steps cannot exceed t0");
    want(cfg.attack_method == "ggdm" || cfg.attack_method == "dlg",
         "attack.method must be ggdm or dlg");
    want(cfg.max_iterations >= 1, "attack.max_iterations must be >= 1");
    want(cfg.eta > 0, "attack.eta must be positive");
    want(cfg.gamma > 0, "attack.gamma must be positive");
    want(cfg.batch_size >= 1, "attack.batch_size must be >= 1");
    want(cfg.dlg_step >= 0, "attack.dlg_step must be >= 0");
    want(cfg.defense_family == "none" || cfg.defense_family == "gaussian" ||
             cfg.defense_family == "laplacian",
         "defense.family must be none, gaussian or laplacian");
    want(cfg.defense_variance >= 0, "defense.variance must be >= 0");
    want(cfg.precision == "double" || cfg.precision == "single",
         "precision must be double or single");
    want(cfg.workers >= 1, "workers must be >= 1");
}

SweepSpec parse_sweep_text(const std::string& text) {
    SweepSpec spec;
    std::string axis, values;
    std::ostringstream base_text;
    parse_lines(text, [&](const std::string& key, const std::string& value, int lineno) {
        if (key == "sweep.axis") {
            axis = value;
        } else if (key == "sweep.values") {
            values = value;
        } else {
            if (!find_binding(key))
                throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" +
                                  key + "'");
            base_text << key << " = " << value << "\n";
        }
    });
    if (axis.empty()) throw ConfigError("sweep config: missing sweep.axis");
    if (values.empty()) throw ConfigError("sweep config: missing sweep.values");
    static const char* axes[] = {"t0", "s_for_s_gen", "eta", "gamma", "batch_size", "epochs_K"};
    bool ok = false;
    for (const char* a : axes) ok = ok || axis == a;
    if (!ok) throw ConfigError("sweep.axis '" + axis + "' is not a sweepable axis");
    spec.axis = axis;
    spec.values = split_csv(values);
    for (const auto& v : spec.values)
        if (v.empty()) throw ConfigError("sweep.values contains an empty entry");
    spec.base = parse_config_text(base_text.str());
    return spec;
}

SweepSpec load_sweep_config(const std::string& path) { return parse_sweep_text(read_file(path)); }

RunConfig apply_axis_value(const RunConfig& base, const std::string& axis,
                           const std::string& value) {
    RunConfig cfg = base;
    if (axis == "t0") {
        cfg.t0 = parse_long("sweep t0", value);
    } else if (axis == "s_for_s_gen") {
        const std::size_t col = value.find(':');
        if (col == std::string::npos)
            throw ConfigError("s_for_s_gen value '" + value + "' must look like 40:6");
        cfg.s_for = parse_long("sweep s_for", value.substr(0, col));
        cfg.s_gen = parse_long("sweep s_gen", value.substr(col + 1));
    } else if (axis == "eta") {
        cfg.eta = parse_double("sweep eta", value);
    } else if (axis == "gamma") {
        cfg.gamma = parse_double("sweep gamma", value);
    } else if (axis == "batch_size") {
        cfg.batch_size = parse_long("sweep batch_size", value);
    } else if (axis == "epochs_K") {
        cfg.max_iterations = parse_long("sweep epochs_K", value);
    } else {
        throw ConfigError("sweep axis '" + axis + "' is not a sweepable axis");
    }
    validate_config(cfg);
    return cfg;
}

std::vector<ConfigKeyDoc> config_schema_docs() {
    const RunConfig defaults;
    std::vector<ConfigKeyDoc> out;
    for (const auto& b : bindings()) out.push_back({b.key, b.type, b.get(defaults), b.help});
    return out;
}

} // namespace gleak
