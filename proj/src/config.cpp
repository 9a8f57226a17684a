#include "neurodec/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "neurodec/errors.hpp"

#ifndef NEURODEC_VERSION
#define NEURODEC_VERSION "dev"
#endif

namespace neurodec {

namespace {

template <class T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_floating_point_v<T>) {
        char buf[64];
        const auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    } else {
        return std::to_string(v);
    }
}

template <class T>
void parse_value(const std::string& key, const std::string& text, T& out) {
    auto bad = [&] { return ConfigError("config: bad value '" + text + "' for " + key); };
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") out = true;
        else if (text == "false" || text == "0") out = false;
        else throw bad();
    } else if constexpr (std::is_same_v<T, std::string>) {
        out = text;
    } else {
        T v{};
        const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
        if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw bad();
        out = v;
    }
}

struct Field {
    std::string key;
    std::function<std::string(RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <class Acc>
Field bind(std::string key, Acc acc) {
    return {key, [acc](RunConfig& c) { return format_value(acc(c)); },
            [acc, key](RunConfig& c, const std::string& v) { parse_value(key, v, acc(c)); }};
}

#define NDF(key, expr) bind(key, [](RunConfig& c) -> auto& { return c.expr; })

void add_schedule(std::vector<Field>& f, const std::string& sec, Schedule& (*acc)(RunConfig&)) {
    f.push_back(bind(sec + ".epochs", [acc](RunConfig& c) -> auto& { return acc(c).epochs; }));
    f.push_back(bind(sec + ".batch", [acc](RunConfig& c) -> auto& { return acc(c).batch; }));
    f.push_back(bind(sec + ".max_steps", [acc](RunConfig& c) -> auto& { return acc(c).max_steps; }));
    f.push_back(bind(sec + ".lr", [acc](RunConfig& c) -> auto& { return acc(c).lr; }));
    f.push_back(bind(sec + ".min_lr", [acc](RunConfig& c) -> auto& { return acc(c).min_lr; }));
    f.push_back(bind(sec + ".warmup_frac", [acc](RunConfig& c) -> auto& { return acc(c).warmup_frac; }));
    f.push_back(bind(sec + ".seed", [acc](RunConfig& c) -> auto& { return acc(c).seed; }));
}

void add_mae(std::vector<Field>& f, const std::string& sec, MaeConfig& (*acc)(RunConfig&)) {
    f.push_back(bind(sec + ".dim", [acc](RunConfig& c) -> auto& { return acc(c).dim; }));
    f.push_back(bind(sec + ".heads", [acc](RunConfig& c) -> auto& { return acc(c).heads; }));
    f.push_back(bind(sec + ".depth_enc", [acc](RunConfig& c) -> auto& { return acc(c).depth_enc; }));
    f.push_back(bind(sec + ".dec_dim", [acc](RunConfig& c) -> auto& { return acc(c).dec_dim; }));
    f.push_back(bind(sec + ".dec_heads", [acc](RunConfig& c) -> auto& { return acc(c).dec_heads; }));
    f.push_back(bind(sec + ".depth_dec", [acc](RunConfig& c) -> auto& { return acc(c).depth_dec; }));
    f.push_back(bind(sec + ".mlp_ratio", [acc](RunConfig& c) -> auto& { return acc(c).mlp_ratio; }));
}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        std::vector<Field> v{
            NDF("run.preset", preset),
            NDF("run.seed", seed),

            NDF("synth.n_voxels", synth.n_voxels),
            NDF("synth.image_size", synth.image_size),
            NDF("synth.n_classes", synth.n_classes),
            NDF("synth.n_subjects", synth.n_subjects),
            NDF("synth.train_per_class", synth.train_per_class),
            NDF("synth.test_per_class", synth.test_per_class),
            NDF("synth.snr", synth.snr),
            NDF("synth.redundancy_len", synth.redundancy_len),
            NDF("synth.subject_variation", synth.subject_variation),
            NDF("synth.background_rank", synth.background_rank),
            NDF("synth.holdout_classes", synth.holdout_classes),
            NDF("synth.seed", synth.seed),

            NDF("phase1.patch", phase1.patch),
            NDF("phase1.mask_ratio", phase1.mask_ratio),
            NDF("phase1.tau", phase1.tau),
            NDF("phase1.gamma_c", phase1.gamma_c),
            NDF("phase1.gamma_s", phase1.gamma_s),
            NDF("phase1.rs_fraction", phase1.rs_fraction),
            NDF("phase1.normalize", phase1.normalize),
            NDF("phase1.epochs", phase1.epochs),
            NDF("phase1.batch", phase1.batch),
            NDF("phase1.max_steps", phase1.max_steps),
            NDF("phase1.lr", phase1.lr),
            NDF("phase1.min_lr", phase1.min_lr),
            NDF("phase1.weight_decay", phase1.weight_decay),
            NDF("phase1.warmup_frac", phase1.warmup_frac),
            NDF("phase1.seed", phase1.seed),

            NDF("image_mae.patch", image_patch),
            NDF("image_mae.mask_ratio", image_pretrain.mask_ratio),
            NDF("image_mae.epochs", image_pretrain.epochs),
            NDF("image_mae.batch", image_pretrain.batch),
            NDF("image_mae.max_steps", image_pretrain.max_steps),
            NDF("image_mae.lr", image_pretrain.lr),
            NDF("image_mae.weight_decay", image_pretrain.weight_decay),
            NDF("image_mae.warmup_frac", image_pretrain.warmup_frac),
            NDF("image_mae.seed", image_pretrain.seed),

            NDF("phase2.gamma_f", phase2.gamma_f),
            NDF("phase2.gamma_i", phase2.gamma_i),
            NDF("phase2.fmri_mask_ratio", phase2.fmri_mask_ratio),
            NDF("phase2.image_mask_ratio", phase2.image_mask_ratio),
            NDF("phase2.masked_only", phase2.masked_only),
            NDF("phase2.ca_init_scale", phase2.ca_init_scale),
            NDF("phase2.epochs", phase2.epochs),
            NDF("phase2.batch", phase2.batch),
            NDF("phase2.max_steps", phase2.max_steps),
            NDF("phase2.lr", phase2.lr),
            NDF("phase2.weight_decay", phase2.weight_decay),
            NDF("phase2.warmup_frac", phase2.warmup_frac),
            NDF("phase2.seed", phase2.seed),

            NDF("latent_ae.channels", latent_ae.channels),
            NDF("latent_ae.latent_channels", latent_ae.latent_channels),
            NDF("latent_ae.latent_penalty", latent_ae.latent_penalty),

            NDF("ldm.channels", ldm.denoiser.channels),
            NDF("ldm.time_dim", ldm.denoiser.time_dim),
            NDF("ldm.sin_dim", ldm.denoiser.sin_dim),
            NDF("ldm.ca_heads", ldm.denoiser.ca_heads),
            NDF("ldm.T", ldm.noise.T),
            NDF("ldm.beta_start", ldm.noise.beta_start),
            NDF("ldm.beta_end", ldm.noise.beta_end),
            NDF("ldm.class_tokens", ldm.class_tokens),
            NDF("ldm.flatten_cond", ldm.flatten_cond),
            NDF("ldm.pretrain", ldm.pretrain),
            NDF("ldm_pretrain.weight_decay", ldm.pretrain_train.weight_decay),
            NDF("finetune.weight_decay", ldm.finetune_train.weight_decay),

            NDF("classifier.channels", classifier.channels),
            NDF("classifier.weight_decay", classifier.weight_decay),

            NDF("generate.sampler", generate.sampler),
            NDF("generate.steps", generate.steps),
            NDF("generate.per_sample", generate.per_sample),
            NDF("generate.seed", generate.seed),

            NDF("eval.n", eval.n),
            NDF("eval.k", eval.k),
            NDF("eval.trials", eval.trials),
            NDF("eval.dataset_labels", eval.dataset_labels),
            NDF("eval.seed", eval.seed),
        };
        add_mae(v, "phase1", [](RunConfig& c) -> MaeConfig& { return c.phase1.mae; });
        add_mae(v, "image_mae", [](RunConfig& c) -> MaeConfig& { return c.image_mae; });
        add_schedule(v, "latent_ae", [](RunConfig& c) -> Schedule& { return c.latent_ae.schedule; });
        add_schedule(v, "ldm_pretrain", [](RunConfig& c) -> Schedule& { return c.ldm.pretrain_train.schedule; });
        add_schedule(v, "finetune", [](RunConfig& c) -> Schedule& { return c.ldm.finetune_train.schedule; });
        add_schedule(v, "classifier", [](RunConfig& c) -> Schedule& { return c.classifier.schedule; });
        return v;
    }();
    return f;
}

#undef NDF

const Field& find_field(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Stage seeds derived from run.seed, in stream order.
const std::vector<std::string>& seed_keys() {
    static const std::vector<std::string> k{"synth.seed",   "phase1.seed",   "image_mae.seed", "phase2.seed",
                                            "latent_ae.seed", "ldm_pretrain.seed", "finetune.seed", "classifier.seed",
                                            "generate.seed", "eval.seed"};
    return k;
}

}  // namespace

void RunConfig::validate() const {
    synth.validate();
    phase1.validate();
    phase1.mae.validate();
    image_mae.validate();
    phase2.validate();
    if (synth.image_size % image_patch != 0) throw ConfigError("config: image_mae.patch must divide synth.image_size");
    if (phase1.mae.num_patches != image_mae.num_patches) {
        throw ConfigError("config: fMRI and image MAEs need equal token counts for cross-modal fusion (" +
                          std::to_string(phase1.mae.num_patches) + " vs " + std::to_string(image_mae.num_patches) + ")");
    }
    if (synth.image_size % 8 != 0) throw ConfigError("config: synth.image_size must be a multiple of 8");
    if (ldm.noise.T == 0) throw ConfigError("config: ldm.T must be >= 1");
    NoiseSchedule::linear(ldm.noise.T, ldm.noise.beta_start, ldm.noise.beta_end);
    if (ldm.class_tokens == 0) throw ConfigError("config: ldm.class_tokens must be >= 1");
    if (ldm.denoiser.channels % ldm.denoiser.ca_heads != 0) throw ConfigError("config: ldm.ca_heads must divide channels");
    if (generate.sampler != "plms" && generate.sampler != "ddpm") {
        throw ConfigError("config: generate.sampler must be plms or ddpm, got '" + generate.sampler + "'");
    }
    if (generate.steps == 0 || generate.steps > ldm.noise.T) throw ConfigError("config: generate.steps must be in [1, T]");
    if (generate.per_sample == 0) throw ConfigError("config: generate.per_sample must be >= 1");
    if (eval.n < 1 || eval.n > synth.n_classes) throw ConfigError("config: eval.n must be in [1, n_classes]");
    if (eval.k < 1 || eval.k > eval.n) throw ConfigError("config: eval.k must be in [1, eval.n]");
    if (eval.trials == 0) throw ConfigError("config: eval.trials must be >= 1");
    if (classifier.n_classes < 2) throw ConfigError("config: classifier needs at least 2 classes");
    for (const Schedule* s : {&latent_ae.schedule, &ldm.pretrain_train.schedule, &ldm.finetune_train.schedule,
                              &classifier.schedule}) {
        if (s->batch == 0 || s->epochs == 0) throw ConfigError("config: batch and epochs must be >= 1");
        if (!(s->lr > 0)) throw ConfigError("config: lr must be positive");
    }
}

void derive_geometry(RunConfig& c) {
    c.synth.patch = c.phase1.patch;
    c.phase1.mae.num_patches = (c.synth.n_voxels + c.phase1.patch - 1) / c.phase1.patch;
    c.phase1.mae.patch_dim = c.phase1.patch;
    const std::size_t g = c.image_patch ? c.synth.image_size / c.image_patch : 0;
    c.image_mae.num_patches = g * g;
    c.image_mae.patch_dim = c.image_patch * c.image_patch * 3;
    c.latent_ae.image_size = c.synth.image_size;
    c.ldm.denoiser.latent_size = c.synth.image_size / 4;
    c.ldm.denoiser.latent_channels = c.latent_ae.latent_channels;
    c.ldm.denoiser.cond_width = c.phase1.mae.dim;
    c.ldm.denoiser.cond_tokens = c.ldm.flatten_cond ? c.phase1.mae.num_patches : 0;
    c.ldm.denoiser.T = c.ldm.noise.T;
    c.classifier.image_size = c.synth.image_size;
    c.classifier.n_classes = c.synth.n_classes;
}

std::vector<std::string> preset_names() {
    return {"desk-default", "god-s145", "god-s23", "table2-id6", "table2-best-mask", "table2-decoder-depth6",
            "plms-250"};
}

RunConfig make_preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    // desk-default
    c.phase1.mae = MaeConfig{64, 16, 64, 4, 4, 64, 4, 2, 2.0};
    c.phase1.mask_ratio = 0.5;
    c.phase1.epochs = 2;
    c.phase1.batch = 8;
    c.phase1.lr = 1e-3;
    c.phase1.normalize = true;
    c.image_mae = MaeConfig{64, 48, 48, 4, 3, 48, 4, 2, 2.0};
    c.image_patch = 4;
    c.image_pretrain.epochs = 2;
    c.phase2.epochs = 1;
    c.latent_ae.schedule = Schedule{4, 8, 0, 2e-3, 1e-4, 0.05, 0};
    c.ldm.pretrain_train.schedule = Schedule{30, 16, 0, 2e-3, 1e-5, 0.05, 0};
    c.ldm.finetune_train.schedule = Schedule{8, 8, 0, 1e-3, 1e-5, 0.05, 0};
    c.classifier.schedule = Schedule{6, 16, 0, 3e-3, 1e-4, 0.05, 0};
    c.generate = GenerateConfig{"plms", 50, 1, 0};
    c.eval = EvalConfig{10, 1, 1000, false, 0};

    if (name == "desk-default") {
    } else if (name == "god-s145") {
        c.phase1.gamma_c = 1.0;
        c.phase1.gamma_s = 1.0;
        c.phase1.mask_ratio = 0.5;
    } else if (name == "god-s23") {
        c.phase1.gamma_c = 0.5;
        c.phase1.gamma_s = 1.0;
        c.phase1.mask_ratio = 0.75;
    } else if (name == "table2-id6") {
        c.phase2.gamma_f = 0.25;
        c.phase2.gamma_i = 1.5;
    } else if (name == "table2-best-mask") {
        c.phase2.fmri_mask_ratio = 0.75;
        c.phase2.image_mask_ratio = 0.5;
    } else if (name == "table2-decoder-depth6") {
        c.phase1.mae.depth_enc = 8;
        c.phase1.mae.depth_dec = 6;
    } else if (name == "plms-250") {
        c.generate.sampler = "plms";
        c.generate.steps = 250;
    } else {
        std::string all;
        for (const auto& p : preset_names()) all += " " + p;
        throw ConfigError("config: unknown preset '" + name + "' (available:" + all + ")");
    }
    derive_geometry(c);
    return c;
}

std::map<std::string, std::string> to_key_values(const RunConfig& cfg) {
    std::map<std::string, std::string> out;
    auto& c = const_cast<RunConfig&>(cfg);
    for (const auto& f : fields()) out[f.key] = f.get(c);
    return out;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "run.preset") throw ConfigError("config: run.preset is chosen with --preset, not set as a key");
    find_field(key).set(cfg, trim(value));
    cfg.explicit_keys.insert(key);
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        const std::string key = section + "." + trim(line.substr(0, eq));
        // the preset line of a dumped config is informational
        if (key == "run.preset") continue;
        set_key(cfg, key, line.substr(eq + 1));
    }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifact("config file not found: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_config_text(cfg, ss.str());
}

void finalize(RunConfig& cfg) {
    const Rng root(cfg.seed);
    const auto& keys = seed_keys();
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (cfg.explicit_keys.count(keys[i])) continue;
        find_field(keys[i]).set(cfg, std::to_string(root.derive(i + 1).seed() >> 16));
    }
    derive_geometry(cfg);
    cfg.validate();
}

std::string dump_resolved_config(const RunConfig& cfg) {
    std::map<std::string, std::map<std::string, std::string>> sections;
    for (const auto& [k, v] : to_key_values(cfg)) {
        const auto dot = k.find('.');
        sections[k.substr(0, dot)][k.substr(dot + 1)] = v;
    }
    std::string out;
    for (const auto& [sec, kv] : sections) {
        if (!out.empty()) out += '\n';
        out += "[" + sec + "]\n";
        for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    }
    return out;
}

RunConfig resolve_config(const std::string& preset, const std::string& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg = make_preset(preset.empty() ? "desk-default" : preset);
    if (!file.empty()) apply_config_file(cfg, file);
    for (const auto& [k, v] : overrides) set_key(cfg, k, v);
    finalize(cfg);
    return cfg;
}

std::string code_version() { return NEURODEC_VERSION; }

}  // namespace neurodec
