#include "neurodec/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <regex>

#include "neurodec/checkpoint.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/image_io.hpp"

namespace neurodec {

namespace {

ProgressFn g_progress = [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); };

void progress(const std::string& msg) {
    if (g_progress) g_progress(msg);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// Progress about 20 times per stage.
std::function<void(const std::vector<double>&)> step_reporter(const std::string& stage, std::size_t total,
                                                              const std::vector<std::string>& cols) {
    const std::size_t every = std::max<std::size_t>(1, total / 20);
    return [stage, total, every, cols](const std::vector<double>& row) {
        const auto step = static_cast<std::size_t>(row[0]);
        if (step % every != 0 && step + 1 != total) return;
        std::string msg = "[" + stage + "] step " + std::to_string(step + 1) + "/" + std::to_string(total);
        for (std::size_t i = 0; i < cols.size() && i + 1 < row.size(); ++i) msg += " " + cols[i] + fmt("=%.5f", row[i + 1]);
        progress(msg);
    };
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

void write_logs(const TrainLog& log, const fs::path& dir, const std::string& stem, std::size_t n, std::size_t batch) {
    log.write_csv(dir / (stem + "_steps.csv"));
    log.per_epoch(steps_per_epoch(n, batch)).write_csv(dir / (stem + ".csv"));
}

Rng init_rng(std::uint64_t stage_seed) { return Rng(stage_seed).derive(0x1d17); }

std::vector<Tensor> voxel_rows(const PairedDataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.voxel_row(i));
    return out;
}

std::vector<Tensor> images_of(const PairedDataset& ds, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.image(i));
    return out;
}

void update_metrics(const fs::path& root, const std::string& stage, const nlohmann::json& entry) {
    const fs::path p = root / "metrics.json";
    nlohmann::json all = nlohmann::json::object();
    if (fs::exists(p)) {
        std::ifstream f(p);
        try {
            f >> all;
        } catch (const nlohmann::json::exception&) {
            all = nlohmann::json::object();
        }
    }
    all[stage] = entry;
    std::ofstream f(p);
    f << all.dump(2) << '\n';
}

double last_value(const TrainLog& log, const std::string& col) {
    const auto v = log.column(col);
    return v.empty() ? 0.0 : v.back();
}

double first_value(const TrainLog& log, const std::string& col) {
    const auto v = log.column(col);
    return v.empty() ? 0.0 : v.front();
}

FmriMae make_fmri(const RunConfig& cfg, Rng& rng) { return FmriMae(cfg.phase1.mae, cfg.synth.n_voxels, cfg.phase1.patch, rng); }

ParamSet fmri_encoder_params(const FmriMae& m) { return m.mae.params().with_prefix("encoder."); }

LatentAE load_latent_ae(const RunConfig& cfg, const fs::path& ckpt_path) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    Rng rng(0);
    LatentAE ae(cfg.latent_ae, rng);
    restore_params(ck, ae.params());
    ae.latent_scale = ck.meta.at("latent_scale").get<double>();
    return ae;
}

NoiseSchedule schedule_of(const RunConfig& cfg) {
    return NoiseSchedule::linear(cfg.ldm.noise.T, cfg.ldm.noise.beta_start, cfg.ldm.noise.beta_end);
}

std::vector<Tensor> encode_latents(const LatentAE& ae, const std::vector<Tensor>& images) {
    std::vector<Tensor> out(images.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < images.size(); ++i) out[i] = ae.encode(images[i]);
    return out;
}

std::string gen_name(std::size_t i, std::size_t j) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "gen_%04zu_%zu.ppm", i, j);
    return buf;
}

std::string gt_name(std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "gt_%04zu.ppm", i);
    return buf;
}

}  // namespace

void set_progress(ProgressFn fn) { g_progress = std::move(fn); }

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> s{Stage::Synth,       Stage::Pretrain,    Stage::Xtune,    Stage::LatentAe,
                                      Stage::PretrainLdm, Stage::FinetuneLdm, Stage::Generate, Stage::Evaluate};
    return s;
}

std::string stage_name(Stage s) {
    switch (s) {
        case Stage::Synth: return "synth";
        case Stage::Pretrain: return "pretrain";
        case Stage::Xtune: return "xtune";
        case Stage::LatentAe: return "train-latent-ae";
        case Stage::PretrainLdm: return "pretrain-ldm";
        case Stage::FinetuneLdm: return "finetune-ldm";
        case Stage::Generate: return "generate";
        case Stage::Evaluate: return "evaluate";
    }
    return "?";
}

Stage parse_stage(const std::string& name) {
    for (auto s : all_stages())
        if (stage_name(s) == name) return s;
    std::string all;
    for (auto s : all_stages()) all += " " + stage_name(s);
    throw ConfigError("unknown stage '" + name + "' (stages:" + all + ")");
}

void require_artifact(const fs::path& path, const std::string& producing_stage) {
    if (!fs::exists(path)) {
        throw MissingArtifact("missing " + path.string() + "; run the '" + producing_stage +
                              "' stage first (e.g. `run --from " + producing_stage + "`)");
    }
}

nlohmann::json checkpoint_meta(const RunConfig& cfg, const std::string& kind) {
    return {{"kind", kind}, {"config", dump_resolved_config(cfg)}, {"code_version", code_version()}};
}

void write_run_header(const RunConfig& cfg, const fs::path& root) {
    fs::create_directories(root);
    std::ofstream(root / "config.ini") << dump_resolved_config(cfg);
    std::ofstream(root / "VERSION") << code_version() << '\n';
}

// ------------------------------------------------------------------ stages

void stage_synth(const RunConfig& cfg, const fs::path& out_dir) {
    progress("[synth] generating " + std::to_string(cfg.synth.n_classes) + "-class dataset");
    const PairedDataset ds = generate(cfg.synth);
    save_dataset(out_dir, ds);
    // held-out fMRI file and ground-truth rasters for generation / evaluation
    Checkpoint fm;
    fm.meta = checkpoint_meta(cfg, "fmri-samples");
    Tensor vox({ds.test.size(), ds.n_voxels()});
    nlohmann::json labels = nlohmann::json::object();
    std::vector<std::size_t> lab;
    fs::create_directories(out_dir / "gt");
    for (std::size_t k = 0; k < ds.test.size(); ++k) {
        const std::size_t i = ds.test[k];
        for (std::size_t c = 0; c < ds.n_voxels(); ++c) vox.at(k, c) = ds.voxels.at(i, c);
        write_ppm(out_dir / "gt" / gt_name(k), ds.image(i), ds.image_size(), ds.image_size());
        labels[gt_name(k)] = ds.labels[i];
        lab.push_back(ds.labels[i]);
    }
    fm.meta["dataset_indices"] = ds.test;
    fm.meta["labels"] = lab;
    fm.tensors.emplace_back("voxels", std::move(vox));
    save_checkpoint(out_dir / "test_fmri.ckpt", fm);
    std::ofstream(out_dir / "gt" / "labels.json") << labels.dump(2) << '\n';
    progress("[synth] " + std::to_string(ds.train.size()) + " train / " + std::to_string(ds.test.size()) + " test pairs");
}

void stage_pretrain(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_ckpt) {
    require_artifact(dataset_dir / "dataset.json", "synth");
    const PairedDataset ds = load_dataset(dataset_dir);
    const auto data = voxel_rows(ds, ds.train);
    Rng rng = init_rng(cfg.phase1.seed);
    const FmriMae model = make_fmri(cfg, rng);
    const std::size_t total = total_steps(data.size(), cfg.phase1.batch, cfg.phase1.epochs, cfg.phase1.max_steps);
    const TrainLog log = train_phase1(model, data, cfg.phase1, step_reporter("pretrain", total, {"L_C", "L_S", "L"}));
    fs::create_directories(out_ckpt.parent_path());
    save_checkpoint(out_ckpt, checkpoint_from(model.mae.params(), checkpoint_meta(cfg, "fmri-mae")));
    write_logs(log, out_ckpt.parent_path(), "metrics", data.size(), cfg.phase1.batch);
    update_metrics(out_ckpt.parent_path().parent_path(), "pretrain",
                   {{"steps", log.rows.size()}, {"L_initial", first_value(log, "L")}, {"L_final", last_value(log, "L")}});
}

void stage_xtune(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& phase1_ckpt,
                 const fs::path& out_dir) {
    require_artifact(dataset_dir / "dataset.json", "synth");
    require_artifact(phase1_ckpt, "pretrain");
    const PairedDataset ds = load_dataset(dataset_dir);
    const auto voxels = voxel_rows(ds, ds.train);
    const auto images = images_of(ds, ds.train);
    fs::create_directories(out_dir);

    Rng rng = init_rng(cfg.phase2.seed);
    ImageMae image(cfg.image_mae, cfg.synth.image_size, cfg.image_patch, rng);
    {
        const auto& ip = cfg.image_pretrain;
        const std::size_t total = total_steps(images.size(), ip.batch, ip.epochs, ip.max_steps);
        const TrainLog log = pretrain_image_mae(image, images, ip);
        write_logs(log, out_dir, "image_mae_metrics", images.size(), ip.batch);
        save_checkpoint(out_dir / "image_mae.ckpt", checkpoint_from(image.mae.params(), checkpoint_meta(cfg, "image-mae")));
        progress("[xtune] image MAE pretrained, " + std::to_string(total) + " steps, loss " +
                 fmt("%.5f", last_value(log, "loss")));
    }
    FmriMae fmri = make_fmri(cfg, rng);
    restore_params(load_checkpoint(phase1_ckpt), fmri.mae.params());
    const XModalModel m = XModalModel::create(fmri, image, cfg.phase2.ca_init_scale, rng);
    const std::size_t total = total_steps(voxels.size(), cfg.phase2.batch, cfg.phase2.epochs, cfg.phase2.max_steps);
    const TrainLog log = train_phase2(m, voxels, images, cfg.phase2, step_reporter("xtune", total, {"L_f", "L_i", "L"}));
    write_logs(log, out_dir, "metrics", voxels.size(), cfg.phase2.batch);
    // only the fMRI encoder continues downstream
    save_checkpoint(out_dir / "fmri_encoder.ckpt",
                    checkpoint_from(fmri_encoder_params(m.fmri), checkpoint_meta(cfg, "fmri-encoder")));
    update_metrics(out_dir.parent_path(), "xtune",
                   {{"steps", log.rows.size()}, {"L_initial", first_value(log, "L")}, {"L_final", last_value(log, "L")}});
}

void stage_latent_ae(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_ckpt) {
    require_artifact(dataset_dir / "dataset.json", "synth");
    const PairedDataset ds = load_dataset(dataset_dir);
    const auto images = images_of(ds, ds.train);
    Rng rng = init_rng(cfg.latent_ae.schedule.seed);
    LatentAE ae(cfg.latent_ae, rng);
    const auto& s = cfg.latent_ae.schedule;
    const std::size_t total = total_steps(images.size(), s.batch, s.epochs, s.max_steps);
    progress("[train-latent-ae] " + std::to_string(total) + " steps");
    const TrainLog log = train_latent_ae(ae, images, cfg.latent_ae);
    auto meta = checkpoint_meta(cfg, "latent-ae");
    meta["latent_scale"] = ae.latent_scale;
    fs::create_directories(out_ckpt.parent_path());
    save_checkpoint(out_ckpt, checkpoint_from(ae.params(), meta));
    write_logs(log, out_ckpt.parent_path(), "metrics", images.size(), s.batch);
    double test_mse = 0;
    {
        NoGradGuard ng;
        for (auto i : ds.test) test_mse += mse(Var(ae.decode(ae.encode(ds.image(i)))), Var(ds.image(i))).item();
        test_mse /= static_cast<double>(std::max<std::size_t>(1, ds.test.size()));
    }
    progress("[train-latent-ae] train mse " + fmt("%.5f", last_value(log, "mse")) + ", test mse " + fmt("%.5f", test_mse));
    update_metrics(out_ckpt.parent_path().parent_path(), "train-latent-ae",
                   {{"steps", log.rows.size()}, {"mse_final", last_value(log, "mse")}, {"test_mse", test_mse},
                    {"latent_scale", ae.latent_scale}});
}

void stage_pretrain_ldm(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& latent_ckpt,
                        const fs::path& out_ckpt) {
    require_artifact(dataset_dir / "dataset.json", "synth");
    require_artifact(latent_ckpt, "train-latent-ae");
    const PairedDataset ds = load_dataset(dataset_dir);
    const LatentAE ae = load_latent_ae(cfg, latent_ckpt);
    const auto latents = encode_latents(ae, images_of(ds, ds.train));
    std::vector<std::size_t> labels;
    for (auto i : ds.train) labels.push_back(ds.labels[i]);
    Rng rng = init_rng(cfg.ldm.pretrain_train.schedule.seed);
    const CondDenoiser den(cfg.ldm.denoiser, rng);
    const std::size_t tokens = cfg.ldm.denoiser.cond_tokens ? cfg.ldm.denoiser.cond_tokens : cfg.ldm.class_tokens;
    const ClassEmbedding classes(cfg.synth.n_classes, tokens, cfg.ldm.denoiser.cond_width, rng);
    const auto& s = cfg.ldm.pretrain_train.schedule;
    const std::size_t total = total_steps(latents.size(), s.batch, s.epochs, s.max_steps);
    const TrainLog log = pretrain_ldm(den, classes, latents, labels, schedule_of(cfg), cfg.ldm.pretrain_train,
                                      step_reporter("pretrain-ldm", total, {"loss"}));
    ParamSet ps = den.params();
    classes.collect(ps, "class_embed.");
    fs::create_directories(out_ckpt.parent_path());
    save_checkpoint(out_ckpt, checkpoint_from(ps, checkpoint_meta(cfg, "denoiser")));
    write_logs(log, out_ckpt.parent_path(), "metrics", latents.size(), s.batch);
    update_metrics(out_ckpt.parent_path().parent_path(), "pretrain-ldm",
                   {{"steps", log.rows.size()}, {"loss_initial", first_value(log, "loss")},
                    {"loss_final", last_value(log, "loss")}});
}

void stage_finetune(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& latent_ckpt,
                    const fs::path& frl_ckpt, const fs::path& ldm_ckpt, const fs::path& out_dir) {
    require_artifact(dataset_dir / "dataset.json", "synth");
    require_artifact(latent_ckpt, "train-latent-ae");
    require_artifact(frl_ckpt, "xtune");
    if (cfg.ldm.pretrain) require_artifact(ldm_ckpt, "pretrain-ldm");
    const PairedDataset ds = load_dataset(dataset_dir);
    const LatentAE ae = load_latent_ae(cfg, latent_ckpt);
    const auto latents = encode_latents(ae, images_of(ds, ds.train));
    const auto voxels = voxel_rows(ds, ds.train);

    Rng rng = init_rng(cfg.ldm.finetune_train.schedule.seed);
    const CondDenoiser den(cfg.ldm.denoiser, rng);
    if (cfg.ldm.pretrain) restore_params(load_checkpoint(ldm_ckpt), den.params());
    const FmriMae fmri = make_fmri(cfg, rng);
    const ParamSet enc = fmri_encoder_params(fmri);
    restore_params(load_checkpoint(frl_ckpt), enc);

    ParamSet trainable = den.conditioning_params();
    trainable.append(enc, "fmri.");
    const auto& s = cfg.ldm.finetune_train.schedule;
    const std::size_t total = total_steps(latents.size(), s.batch, s.epochs, s.max_steps);
    const NoiseSchedule sched = schedule_of(cfg);
    const TrainLog log = finetune_ldm(
        den, trainable, latents, [&](std::size_t i) { return fmri.encode_tokens(voxels[i]); }, sched,
        cfg.ldm.finetune_train, step_reporter("finetune-ldm", total, {"loss"}));
    fs::create_directories(out_dir);
    save_checkpoint(out_dir / "denoiser.ckpt", checkpoint_from(den.params(), checkpoint_meta(cfg, "denoiser")));
    save_checkpoint(out_dir / "fmri_encoder.ckpt", checkpoint_from(enc, checkpoint_meta(cfg, "fmri-encoder")));
    write_logs(log, out_dir, "metrics", latents.size(), s.batch);

    // matched vs shuffled conditioning on the held-out pairs
    const auto test_lat = encode_latents(ae, images_of(ds, ds.test));
    std::vector<Tensor> conds(ds.test.size());
    {
        NoGradGuard ng;
        for (std::size_t k = 0; k < ds.test.size(); ++k) conds[k] = fmri.encode_tokens(ds.voxel_row(ds.test[k])).value();
    }
    const auto [matched, shuffled] = conditioning_gap(den, test_lat, conds, sched, 4, s.seed ^ 0x9a9);
    const nlohmann::json gap{{"matched", matched}, {"shuffled", shuffled}, {"gap", shuffled - matched}};
    std::ofstream(out_dir / "conditioning_gap.json") << gap.dump(2) << '\n';
    progress("[finetune-ldm] conditioning loss matched " + fmt("%.5f", matched) + " shuffled " + fmt("%.5f", shuffled));
    update_metrics(out_dir.parent_path(), "finetune-ldm",
                   {{"steps", log.rows.size()}, {"loss_initial", first_value(log, "loss")},
                    {"loss_final", last_value(log, "loss")}, {"conditioning_gap", gap}});
}

void stage_generate(const RunConfig& cfg, const fs::path& fmri_file, const fs::path& finetune_dir,
                    const fs::path& latent_ckpt, const GenerateOptions& opt, const fs::path& out_dir) {
    require_artifact(fmri_file, "synth");
    require_artifact(finetune_dir / "denoiser.ckpt", "finetune-ldm");
    require_artifact(finetune_dir / "fmri_encoder.ckpt", "finetune-ldm");
    require_artifact(latent_ckpt, "train-latent-ae");
    if (opt.sampler != "plms" && opt.sampler != "ddpm") throw ConfigError("generate: unknown sampler '" + opt.sampler + "'");
    const Checkpoint fm = load_checkpoint(fmri_file);
    const Tensor* vox = fm.find("voxels");
    if (!vox) throw FormatError(fmri_file.string() + ": no 'voxels' tensor");
    if (vox->cols() != cfg.synth.n_voxels) throw ShapeError("generate: fMRI width does not match the configuration");
    const LatentAE ae = load_latent_ae(cfg, latent_ckpt);
    Rng rng(0);
    const CondDenoiser den(cfg.ldm.denoiser, rng);
    restore_params(load_checkpoint(finetune_dir / "denoiser.ckpt"), den.params());
    const FmriMae fmri = make_fmri(cfg, rng);
    restore_params(load_checkpoint(finetune_dir / "fmri_encoder.ckpt"), fmri_encoder_params(fmri));
    const NoiseSchedule sched = schedule_of(cfg);
    const std::size_t n = opt.limit ? std::min(opt.limit, vox->rows()) : vox->rows();
    const std::size_t side = cfg.ldm.denoiser.latent_size;
    fs::create_directories(out_dir);
    progress("[generate] " + std::to_string(n * opt.per_sample) + " images, " + opt.sampler + " " +
             std::to_string(opt.steps) + " steps");
    const Rng root(opt.seed);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < n; ++i) {
        Tensor row({1, vox->cols()});
        for (std::size_t c = 0; c < vox->cols(); ++c) row[c] = vox->at(i, c);
        Tensor cond;
        {
            NoGradGuard ng;
            cond = fmri.encode_tokens(row).value();
        }
        const EpsFn eps = make_eps_fn(den, cond);
        for (std::size_t j = 0; j < opt.per_sample; ++j) {
            Rng r = root.derive(i * 1000 + j);
            const Tensor z_T = r.normal_tensor({side * side, cfg.ldm.denoiser.latent_channels});
            const Tensor z0 = opt.sampler == "plms" ? plms_sample(eps, sched, opt.steps, z_T)
                                                    : ddpm_sample(eps, sched, opt.steps, z_T, r);
            write_ppm(out_dir / gen_name(i, j), ae.decode(z0), cfg.synth.image_size, cfg.synth.image_size);
        }
    }
}

void stage_train_classifier(const RunConfig& cfg, const fs::path& dataset_dir, const fs::path& out_ckpt) {
    require_artifact(dataset_dir / "dataset.json", "synth");
    const PairedDataset ds = load_dataset(dataset_dir);
    std::vector<std::size_t> ytr, yte;
    for (auto i : ds.train) ytr.push_back(ds.labels[i]);
    for (auto i : ds.test) yte.push_back(ds.labels[i]);
    Rng rng = init_rng(cfg.classifier.schedule.seed);
    Classifier clf(cfg.classifier, rng);
    const auto& s = cfg.classifier.schedule;
    const std::size_t total = total_steps(ds.train.size(), s.batch, s.epochs, s.max_steps);
    progress("[classifier] " + std::to_string(total) + " steps");
    const TrainLog log = train_toy_classifier(clf, images_of(ds, ds.train), ytr, cfg.classifier);
    const double acc = classifier_accuracy(clf, images_of(ds, ds.test), yte);
    auto meta = checkpoint_meta(cfg, "classifier");
    meta["image_size"] = cfg.classifier.image_size;
    meta["n_classes"] = cfg.classifier.n_classes;
    meta["channels"] = cfg.classifier.channels;
    meta["heldout_accuracy"] = acc;
    fs::create_directories(out_ckpt.parent_path());
    save_checkpoint(out_ckpt, checkpoint_from(clf.params(), meta));
    write_logs(log, out_ckpt.parent_path(), "metrics", ds.train.size(), s.batch);
    progress("[classifier] held-out accuracy " + fmt("%.3f", acc));
    update_metrics(out_ckpt.parent_path().parent_path(), "classifier",
                   {{"steps", log.rows.size()}, {"heldout_accuracy", acc}});
}

Classifier load_classifier(const fs::path& ckpt_path) {
    require_artifact(ckpt_path, "evaluate");
    const Checkpoint ck = load_checkpoint(ckpt_path);
    ClassifierConfig cc;
    try {
        cc.image_size = ck.meta.at("image_size").get<std::size_t>();
        cc.n_classes = ck.meta.at("n_classes").get<std::size_t>();
        cc.channels = ck.meta.at("channels").get<std::size_t>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(ckpt_path.string() + ": not a classifier checkpoint");
    }
    Rng rng(0);
    Classifier clf(cc, rng);
    restore_params(ck, clf.params());
    return clf;
}

EvalReport stage_evaluate(const fs::path& gen_dir, const fs::path& gt_dir, const fs::path& classifier_ckpt,
                          const EvaluateOptions& opt, const fs::path& json_out, const fs::path& csv_out) {
    require_artifact(gen_dir, "generate");
    require_artifact(gt_dir, "synth");
    const Classifier clf = load_classifier(classifier_ckpt);
    nlohmann::json labels;
    if (opt.dataset_labels) {
        require_artifact(gt_dir / "labels.json", "synth");
        std::ifstream(gt_dir / "labels.json") >> labels;
    }
    std::vector<fs::path> gens;
    for (const auto& e : fs::directory_iterator(gen_dir))
        if (std::regex_match(e.path().filename().string(), std::regex(R"(gen_\d+_\d+\.ppm)"))) gens.push_back(e.path());
    std::sort(gens.begin(), gens.end());
    if (gens.empty()) throw MissingArtifact("no generated images in " + gen_dir.string() + "; run 'generate' first");
    std::vector<Tensor> gen, gt;
    std::vector<std::size_t> ys;
    for (const auto& g : gens) {
        const std::string name = g.filename().string();
        const std::size_t idx = std::stoul(name.substr(4, name.find('_', 4) - 4));
        const fs::path gt_path = gt_dir / gt_name(idx);
        std::size_t h = 0, w = 0;
        gen.push_back(read_ppm(g, h, w));
        gt.push_back(read_ppm(gt_path, h, w));
        if (opt.dataset_labels) ys.push_back(labels.at(gt_name(idx)).get<std::size_t>());
    }
    const EvalReport rep = evaluate_pairs(gen, gt, clf, opt.n, opt.k, opt.trials, opt.seed, ys);
    rep.write(json_out, csv_out);
    progress("[evaluate] " + std::to_string(opt.n) + "-way top-" + std::to_string(opt.k) + " success rate " +
             fmt("%.4f", rep.success_rate) + " over " + std::to_string(gen.size()) + " images");
    return rep;
}

// -------------------------------------------------------------- sequencing

void run_pipeline(const RunConfig& cfg, const fs::path& root, Stage from, Stage to) {
    const RunPaths p{root};
    write_run_header(cfg, root);
    for (Stage s : all_stages()) {
        if (static_cast<int>(s) < static_cast<int>(from) || static_cast<int>(s) > static_cast<int>(to)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        progress("== " + stage_name(s));
        switch (s) {
            case Stage::Synth: stage_synth(cfg, p.dataset_dir()); break;
            case Stage::Pretrain: stage_pretrain(cfg, p.dataset_dir(), p.fmri_mae()); break;
            case Stage::Xtune: stage_xtune(cfg, p.dataset_dir(), p.fmri_mae(), p.root / "xtune"); break;
            case Stage::LatentAe: stage_latent_ae(cfg, p.dataset_dir(), p.latent_ae()); break;
            case Stage::PretrainLdm:
                if (cfg.ldm.pretrain) stage_pretrain_ldm(cfg, p.dataset_dir(), p.latent_ae(), p.ldm_pretrained());
                else progress("[pretrain-ldm] skipped (ldm.pretrain = false)");
                break;
            case Stage::FinetuneLdm:
                stage_finetune(cfg, p.dataset_dir(), p.latent_ae(), p.frl_encoder(), p.ldm_pretrained(),
                               p.root / "finetune");
                break;
            case Stage::Generate:
                stage_generate(cfg, p.test_fmri(), p.root / "finetune", p.latent_ae(),
                               {cfg.generate.sampler, cfg.generate.steps, cfg.generate.per_sample, 0, cfg.generate.seed},
                               p.gen_dir());
                break;
            case Stage::Evaluate: {
                if (!fs::exists(p.classifier())) stage_train_classifier(cfg, p.dataset_dir(), p.classifier());
                const EvalReport rep = stage_evaluate(
                    p.gen_dir(), p.gt_dir(), p.classifier(),
                    {cfg.eval.n, cfg.eval.k, cfg.eval.trials, cfg.eval.dataset_labels, cfg.eval.seed}, p.eval_json(),
                    p.eval_csv());
                update_metrics(root, "evaluate",
                               {{"n", rep.n}, {"k", rep.k}, {"trials", rep.trials}, {"success_rate", rep.success_rate}});
                break;
            }
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        progress("== " + stage_name(s) + " done in " + fmt("%.1f s", secs));
    }
}

}  // namespace neurodec
