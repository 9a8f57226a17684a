#pragma once

// Stage sequencing over a run directory. Stages exchange data only through
// files:
//
//   <run>/config.ini, VERSION
//   synth/        dataset.json(+.bin), test_fmri.ckpt, gt/gt_NNNN.ppm, gt/labels.json
//   pretrain/     fmri_mae.ckpt, metrics.csv
//   xtune/        image_mae.ckpt, fmri_encoder.ckpt, metrics.csv, image_mae_metrics.csv
//   latent_ae/    latent_ae.ckpt, metrics.csv
//   ldm_pretrain/ denoiser.ckpt, metrics.csv
//   finetune/     denoiser.ckpt, fmri_encoder.ckpt, metrics.csv, conditioning_gap.json
//   generate/     gen_NNNN_J.ppm
//   classifier/   classifier.ckpt, metrics.csv
//   eval_report.json, eval_report.csv, metrics.json

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neurodec/config.hpp"

namespace neurodec {

namespace fs = std::filesystem;

enum class Stage { Synth, Pretrain, Xtune, LatentAe, PretrainLdm, FinetuneLdm, Generate, Evaluate };

const std::vector<Stage>& all_stages();
std::string stage_name(Stage s);  // CLI spelling, e.g. "train-latent-ae"
Stage parse_stage(const std::string& name);

struct RunPaths {
    fs::path root;

    fs::path config() const { return root / "config.ini"; }
    fs::path dataset_dir() const { return root / "synth"; }
    fs::path test_fmri() const { return root / "synth" / "test_fmri.ckpt"; }
    fs::path gt_dir() const { return root / "synth" / "gt"; }
    fs::path fmri_mae() const { return root / "pretrain" / "fmri_mae.ckpt"; }
    fs::path image_mae() const { return root / "xtune" / "image_mae.ckpt"; }
    fs::path frl_encoder() const { return root / "xtune" / "fmri_encoder.ckpt"; }
    fs::path latent_ae() const { return root / "latent_ae" / "latent_ae.ckpt"; }
    fs::path ldm_pretrained() const { return root / "ldm_pretrain" / "denoiser.ckpt"; }
    fs::path ldm_finetuned() const { return root / "finetune" / "denoiser.ckpt"; }
    fs::path finetuned_encoder() const { return root / "finetune" / "fmri_encoder.ckpt"; }
    fs::path gen_dir() const { return root / "generate"; }
    fs::path classifier() const { return root / "classifier" / "classifier.ckpt"; }
    fs::path eval_json() const { return root / "eval_report.json"; }
    fs::path eval_csv() const { return root / "eval_report.csv"; }
    fs::path metrics() const { return root / "metrics.json"; }
};

// Progress lines go here (stderr by default).
using ProgressFn = std::function<void(const std::string&)>;
void set_progress(ProgressFn fn);

// Individual stages with explicit inputs and outputs.
void stage_synth(const RunConfig& cfg, const fs::path& out_dir);
void stage_pretrain(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_ckpt);
void stage_xtune(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& phase1_ckpt,
                 const fs::path& out_dir);
void stage_latent_ae(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_ckpt);
void stage_pretrain_ldm(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& latent_ckpt,
                        const fs::path& out_ckpt);
// `ldm_ckpt` may be empty when pretraining is disabled.
void stage_finetune(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& latent_ckpt,
                    const fs::path& frl_ckpt, const fs::path& ldm_ckpt, const fs::path& out_dir);
struct GenerateOptions {
    std::string sampler = "plms";
    std::size_t steps = 50;
    std::size_t per_sample = 1;
    std::size_t limit = 0;  // 0: all samples in the fMRI file
    std::uint64_t seed = 0;
};
void stage_generate(const RunConfig& cfg, const fs::path& fmri_file, const fs::path& finetune_dir,
                    const fs::path& latent_ckpt, const GenerateOptions& opt, const fs::path& out_dir);
void stage_train_classifier(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_ckpt);
struct EvaluateOptions {
    std::size_t n = 10, k = 1, trials = 1000;
    bool dataset_labels = false;
    std::uint64_t seed = 0;
};
EvalReport stage_evaluate(const fs::path& gen_dir, const fs::path& gt_dir, const fs::path& classifier_ckpt,
                          const EvaluateOptions& opt, const fs::path& json_out, const fs::path& csv_out);

// Runs stages [from, to] under `root`, checking each stage's inputs first.
void run_pipeline(const RunConfig& cfg, const fs::path& root, Stage from = Stage::Synth,
                  Stage to = Stage::Evaluate);

// Helpers shared with the CLI and tests.
void write_run_header(const RunConfig& cfg, const fs::path& root);
void require_artifact(const fs::path& path, const std::string& producing_stage);
nlohmann::json checkpoint_meta(const RunConfig& cfg, const std::string& kind);
Classifier load_classifier(const fs::path& ckpt);

}  // namespace neurodec
