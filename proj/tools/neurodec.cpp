// neurodec command-line driver.

#include <omp.h>

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "neurodec/checkpoint.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/gradsuite.hpp"
#include "neurodec/pipeline.hpp"

using namespace neurodec;

namespace {

struct ConfigArgs {
    std::string preset;
    std::string file;
    std::vector<std::string> sets;
};

struct Globals {
    std::uint64_t seed = 0;
    bool seed_given = false;
    int threads = 0;
};

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    return out;
}

// Explicit preset/config/overrides win; otherwise reuse <run>/config.ini.
RunConfig resolve(const ConfigArgs& a, const Globals& g, const fs::path& run_dir) {
    auto sets = parse_sets(a.sets);
    if (g.seed_given) sets.insert(sets.begin(), {"run.seed", std::to_string(g.seed)});
    std::string file = a.file;
    if (a.preset.empty() && file.empty() && fs::exists(run_dir / "config.ini")) file = (run_dir / "config.ini").string();
    std::string preset = a.preset;
    if (preset.empty() && !file.empty()) {
        // keep the preset recorded in a dumped config
        std::ifstream f(file);
        std::string line, section;
        while (std::getline(f, line)) {
            if (line.rfind("[", 0) == 0) section = line;
            if (section == "[run]" && line.rfind("preset = ", 0) == 0) preset = line.substr(9);
        }
    }
    return resolve_config(preset, file, sets);
}

void add_config_opts(CLI::App* sub, ConfigArgs& a) {
    sub->add_option("--preset", a.preset, "Named preset")->check(CLI::IsMember(preset_names()));
    sub->add_option("--config", a.file, "Config file (sectioned key = value)");
    sub->add_option("--set", a.sets, "Override, section.key=value (repeatable)");
}

int run_cli(int argc, char** argv) {
    CLI::App app{"neurodec: fMRI representation learning and conditional latent diffusion"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Run seed (stage seeds derive from it)")
        ->each([&](const std::string&) { g.seed_given = true; });
    app.add_option("--threads", g.threads, "OpenMP threads (0: runtime default)");

    ConfigArgs ca;
    std::string run_dir = "run";
    std::string out;

    auto* synth = app.add_subcommand("synth", "Generate the synthetic paired dataset");
    auto* pretrain = app.add_subcommand("pretrain", "Phase 1: double-contrastive MAE on fMRI");
    auto* xtune = app.add_subcommand("xtune", "Phase 2: cross-modal tuning with an image MAE");
    auto* lae = app.add_subcommand("train-latent-ae", "Train the image latent auto-encoder");
    auto* pldm = app.add_subcommand("pretrain-ldm", "Label-conditioned diffusion pretraining");
    auto* fldm = app.add_subcommand("finetune-ldm", "fMRI-conditioned diffusion fine-tuning");
    auto* gen = app.add_subcommand("generate", "Sample images from fMRI");
    auto* clf = app.add_subcommand("train-classifier", "Train the evaluation classifier");
    auto* ev = app.add_subcommand("evaluate", "n-way top-k semantic evaluation");
    auto* run = app.add_subcommand("run", "Run the full pipeline");
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    auto* dump = app.add_subcommand("dump-config", "Print the resolved configuration");

    for (auto* s : {synth, pretrain, xtune, lae, pldm, fldm, gen, clf, run, dump}) add_config_opts(s, ca);
    for (auto* s : {synth, pretrain, xtune, lae, pldm, fldm, gen, clf, ev}) {
        s->add_option("--run", run_dir, "Run directory holding stage artifacts")->capture_default_str();
    }

    std::string dataset, phase1_ckpt, frl_ckpt, latent_ckpt, ldm_ckpt, fmri_file, finetune_dir;
    for (auto* s : {synth, pretrain, xtune, lae, pldm, fldm, gen, clf, ev, run, dump}) {
        s->add_option("--out", out, "Output path (file or directory, per command)");
    }
    for (auto* s : {pretrain, xtune, lae, pldm, fldm, clf}) s->add_option("--dataset", dataset, "Dataset directory");
    xtune->add_option("--phase1-ckpt", phase1_ckpt, "Phase-1 checkpoint");
    for (auto* s : {pldm, fldm, gen}) s->add_option("--latent-ae", latent_ckpt, "Latent auto-encoder checkpoint");
    fldm->add_option("--frl-ckpt", frl_ckpt, "fMRI encoder checkpoint from xtune");
    fldm->add_option("--ldm-ckpt", ldm_ckpt, "Pretrained denoiser checkpoint");

    GenerateOptions gopt;
    std::size_t gen_steps = 0;
    std::string gen_sampler;
    gen->add_option("--fmri", fmri_file, "fMRI samples file (checkpoint format, tensor 'voxels')");
    gen->add_option("--finetune-dir", finetune_dir, "Directory with the fine-tuned denoiser and encoder");
    gen->add_option("--n", gopt.limit, "Number of fMRI samples to decode (0: all)");
    gen->add_option("--per-sample", gopt.per_sample, "Images per fMRI sample");
    gen->add_option("--sampler", gen_sampler, "plms or ddpm")->check(CLI::IsMember({"plms", "ddpm"}));
    gen->add_option("--steps", gen_steps, "Sampler steps");
    std::uint64_t local_seed = 0;
    bool local_seed_given = false;
    for (auto* s : {gen, ev}) {
        s->add_option("--seed", local_seed, "Sampling / trial seed")->each([&](const std::string&) { local_seed_given = true; });
    }

    EvaluateOptions eopt;
    std::string gen_dir, gt_dir, clf_ckpt;
    ev->add_option("--gen-dir", gen_dir, "Generated images");
    ev->add_option("--gt-dir", gt_dir, "Ground-truth images");
    ev->add_option("--classifier", clf_ckpt, "Classifier checkpoint");
    ev->add_option("--n", eopt.n, "Candidates per trial")->capture_default_str();
    ev->add_option("--k", eopt.k, "Top-k")->capture_default_str();
    ev->add_option("--trials", eopt.trials, "Trials per image")->capture_default_str();
    ev->add_flag("--dataset-labels", eopt.dataset_labels, "Use dataset labels as ground truth");

    std::string from = "synth", to = "evaluate";
    run->add_option("--from", from, "First stage");
    run->add_option("--to", to, "Last stage");

    std::size_t gc_seed = 1;
    gc->add_option("--case-seed", gc_seed, "Seed for the random test inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    if (g.threads > 0) omp_set_num_threads(g.threads);

    const RunPaths rp{run_dir};
    auto or_default = [](const std::string& v, const fs::path& d) { return v.empty() ? d : fs::path(v); };
    auto header = [&](const RunConfig& cfg) {
        if (!fs::exists(rp.config())) write_run_header(cfg, rp.root);
    };

    if (*dump) {
        const RunConfig cfg = resolve(ca, g, fs::path(run_dir));
        const std::string text = dump_resolved_config(cfg);
        if (out.empty()) std::cout << text;
        else std::ofstream(out) << text;
        return 0;
    }
    if (*gc) {
        std::size_t failed = 0;
        auto cases = op_grad_cases(gc_seed);
        for (auto& c : loss_grad_cases(gc_seed)) cases.push_back(std::move(c));
        for (const auto& c : cases) {
            GradCheckOptions o;
            o.tol = c.tol;
            o.max_coords = 64;
            const GradCheckReport r = grad_check(c.loss, c.params, o);
            std::printf("%-30s max_rel_err %.3e tol %.0e %s\n", c.name.c_str(), r.max_rel_error, c.tol,
                        r.passed ? "PASS" : "FAIL");
            if (!r.passed) ++failed;
        }
        std::printf("%zu/%zu cases passed\n", cases.size() - failed, cases.size());
        return failed ? 4 : 0;
    }
    if (*ev) {
        if (local_seed_given) eopt.seed = local_seed;
        const fs::path json = or_default(out, rp.eval_json());
        fs::path csv = json;
        csv.replace_extension(".csv");
        stage_evaluate(or_default(gen_dir, rp.gen_dir()), or_default(gt_dir, rp.gt_dir()),
                       or_default(clf_ckpt, rp.classifier()), eopt, json, csv);
        return 0;
    }
    if (*run) {
        const fs::path root = out.empty() ? fs::path(run_dir) : fs::path(out);
        const RunConfig cfg = resolve(ca, g, root);
        run_pipeline(cfg, root, parse_stage(from), parse_stage(to));
        return 0;
    }

    const RunConfig cfg = resolve(ca, g, fs::path(run_dir));
    const fs::path ds = or_default(dataset, rp.dataset_dir());
    header(cfg);
    if (*synth) stage_synth(cfg, or_default(out, rp.dataset_dir()));
    if (*pretrain) stage_pretrain(cfg, ds, or_default(out, rp.fmri_mae()));
    if (*xtune) stage_xtune(cfg, ds, or_default(phase1_ckpt, rp.fmri_mae()), or_default(out, rp.root / "xtune"));
    if (*lae) stage_latent_ae(cfg, ds, or_default(out, rp.latent_ae()));
    if (*pldm) stage_pretrain_ldm(cfg, ds, or_default(latent_ckpt, rp.latent_ae()), or_default(out, rp.ldm_pretrained()));
    if (*fldm) {
        stage_finetune(cfg, ds, or_default(latent_ckpt, rp.latent_ae()), or_default(frl_ckpt, rp.frl_encoder()),
                       or_default(ldm_ckpt, rp.ldm_pretrained()), or_default(out, rp.root / "finetune"));
    }
    if (*gen) {
        gopt.sampler = gen_sampler.empty() ? cfg.generate.sampler : gen_sampler;
        gopt.steps = gen_steps ? gen_steps : cfg.generate.steps;
        gopt.seed = local_seed_given ? local_seed : cfg.generate.seed;
        stage_generate(cfg, or_default(fmri_file, rp.test_fmri()), or_default(finetune_dir, rp.root / "finetune"),
                       or_default(latent_ckpt, rp.latent_ae()), gopt, or_default(out, rp.gen_dir()));
    }
    if (*clf) stage_train_classifier(cfg, ds, or_default(out, rp.classifier()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const MissingArtifact& e) {
        std::fprintf(stderr, "missing artifact: %s\n", e.what());
        return 3;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "bad artifact: %s\n", e.what());
        return 3;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
