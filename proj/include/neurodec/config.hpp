#pragma once

// Run configuration: every stage's hyperparameters in one flat, sectioned
// key = value text format.
//
//   # comment
//   [phase1]
//   mask_ratio = 0.5
//
// Resolution order: preset, then a config file, then individual overrides.
// Stage seeds not set explicitly are derived from run.seed.

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "neurodec/dcmae.hpp"
#include "neurodec/diffusion.hpp"
#include "neurodec/eval.hpp"
#include "neurodec/latent_ae.hpp"
#include "neurodec/synth.hpp"
#include "neurodec/xmodal.hpp"

namespace neurodec {

struct NoiseConfig {
    std::size_t T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct LdmConfig {
    DenoiserConfig denoiser;
    NoiseConfig noise;
    std::size_t class_tokens = 4;  // mean mode only; flatten mode uses the fMRI token count
    bool flatten_cond = true;
    bool pretrain = true;  // false skips label-conditioned pretraining
    DiffusionTrainConfig pretrain_train;
    DiffusionTrainConfig finetune_train;
};

struct GenerateConfig {
    std::string sampler = "plms";  // plms | ddpm
    std::size_t steps = 50;
    std::size_t per_sample = 1;  // images per fMRI sample
    std::uint64_t seed = 0;
};

struct EvalConfig {
    std::size_t n = 10;
    std::size_t k = 1;
    std::size_t trials = 1000;
    bool dataset_labels = false;  // use dataset labels instead of classifier ground truth
    std::uint64_t seed = 0;
};

struct RunConfig {
    std::string preset = "desk-default";
    std::uint64_t seed = 7;
    SynthConfig synth;
    Phase1Config phase1;
    MaeConfig image_mae;
    std::size_t image_patch = 4;
    ImagePretrainConfig image_pretrain;
    Phase2Config phase2;
    LatentAeConfig latent_ae;
    LdmConfig ldm;
    ClassifierConfig classifier;
    GenerateConfig generate;
    EvalConfig eval;

    // Keys set explicitly (file or override), in "section.key" form.
    std::set<std::string> explicit_keys;

    void validate() const;
};

// Fills geometry fields that follow from others (patch counts, widths).
void derive_geometry(RunConfig& cfg);

std::vector<std::string> preset_names();
RunConfig make_preset(const std::string& name);

// "section.key" -> value text, for every hyperparameter.
std::map<std::string, std::string> to_key_values(const RunConfig& cfg);
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses the sectioned text and applies each entry.
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::string& path);

// Derives unset stage seeds from run.seed, fills geometry, validates.
void finalize(RunConfig& cfg);

// Canonical dump: sections and keys sorted, one "key = value" per line.
std::string dump_resolved_config(const RunConfig& cfg);

// preset -> file -> overrides -> finalize
RunConfig resolve_config(const std::string& preset, const std::string& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

std::string code_version();

}  // namespace neurodec
