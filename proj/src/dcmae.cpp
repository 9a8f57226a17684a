#include "neurodec/dcmae.hpp"

#include <cmath>
#include <sstream>

#include "neurodec/errors.hpp"

namespace neurodec {

Var contrastive_loss(const Var& anchors, const Var& positives, double tau, bool normalize) {
    if (!(tau > 0.0)) throw ContractError("contrastive loss: tau must be positive");
    if (anchors.value().rank() != 2 || anchors.shape() != positives.shape()) {
        throw ShapeError("contrastive loss: anchors " + shape_str(anchors.shape()) + " vs positives " +
                         shape_str(positives.shape()));
    }
    const std::size_t n = anchors.value().rows();
    if (n == 0) throw ContractError("contrastive loss: empty batch");
    const Var a = normalize ? normalize_rows(anchors) : anchors;
    const Var p = normalize ? normalize_rows(positives) : positives;

    // Row i: [a_i.a_0 ... a_i.p_i (at i) ... a_i.a_{n-1}] / tau
    const Var pos = row_sums(mul(a, p));
    const Var parts[] = {reshape(matmul_nt(a, a), {1, n * n}), reshape(pos, {1, n})};
    std::vector<std::size_t> index(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) index[i * n + j] = (i == j) ? n * n + i : i * n + j;
    const Var logits = scale(gather_elements(concat_cols(parts), index, {n, n}), 1.0 / tau);
    return scale(sum(sub(logsumexp_rows(logits), scale(pos, 1.0 / tau))), 1.0 / static_cast<double>(n));
}

Var loss_cross_contrastive(const Var& d1, const Var& d2, double tau, bool normalize) {
    return contrastive_loss(d1, d2, tau, normalize);
}

Var loss_self_contrastive(const Var& decoded, const Var& originals, double tau, bool normalize) {
    return contrastive_loss(decoded, originals, tau, normalize);
}

void Phase1Config::validate() const {
    mae.validate();
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("pretrain: mask_ratio must be in [0, 1)");
    if (!(tau > 0.0)) throw ConfigError("pretrain: tau must be positive");
    if (gamma_c < 0.0 || gamma_s < 0.0) throw ConfigError("pretrain: loss weights must be non-negative");
    if (mae.depth_dec >= mae.depth_enc) throw ConfigError("pretrain: decoder depth must be below encoder depth");
    if (!(rs_fraction >= 0.0 && rs_fraction < 1.0)) throw ConfigError("pretrain: rs_fraction must be in [0, 1)");
    if (batch == 0) throw ConfigError("pretrain: batch must be >= 1");
    if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("pretrain: warmup_frac must be in [0, 1]");
}

FmriMae::FmriMae(const MaeConfig& mae_cfg, std::size_t n_voxels, std::size_t patch, Rng& rng)
    : n_voxels_(n_voxels), patch_(patch) {
    MaeConfig cfg = mae_cfg;
    cfg.patch_dim = patch;
    cfg.num_patches = (n_voxels + patch - 1) / patch;
    mae = MaskedAutoencoder(cfg, rng);
}

Var FmriMae::patches(const Tensor& voxels) const {
    if (voxels.numel() != n_voxels_) {
        throw ShapeError("fmri: expected " + std::to_string(n_voxels_) + " voxels, got " + shape_str(voxels.shape()));
    }
    return Var(nn::patchify_fmri(voxels, patch_).patches);
}

Var FmriMae::flatten(const Var& decoded_patches, const MaskedSequence& mask) const {
    const Var flat = reassemble(mask, decoded_patches);
    return flat.numel() == n_voxels_ ? flat : slice_cols(flat, 0, n_voxels_);
}

Var FmriMae::reconstruct(const Tensor& voxels, double mask_ratio, Rng& rng) const {
    const MaeEncoding enc = mae.encode(patches(voxels), mask_ratio, rng);
    return flatten(mae.decode(mae.decoder_input(enc)), enc.mask);
}

Var FmriMae::encode_tokens(const Tensor& voxels) const { return mae.encode_all(patches(voxels)); }

std::pair<Var, Var> forward_twice(const FmriMae& model, const std::vector<Tensor>& batch, double mask_ratio,
                                  Rng& rng) {
    if (batch.empty()) throw ContractError("forward_twice: empty batch");
    std::vector<Var> first, second;
    for (const auto& v : batch) {
        first.push_back(model.reconstruct(v, mask_ratio, rng));
        second.push_back(model.reconstruct(v, mask_ratio, rng));
    }
    return {concat_rows(first), concat_rows(second)};
}

namespace {

Var stack_rows(const std::vector<Tensor>& rows) {
    const std::size_t n = rows.front().numel();
    Tensor out({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(rows[i].data(), n, out.data() + i * n);
    return Var(std::move(out));
}

}  // namespace

Phase1Losses phase1_loss(const FmriMae& model, const std::vector<Tensor>& inputs,
                         const std::vector<Tensor>& originals, const Phase1Config& cfg, Rng& rng) {
    if (inputs.size() != originals.size()) throw ShapeError("phase1: inputs and originals differ in count");
    auto [d1, d2] = forward_twice(model, inputs, cfg.mask_ratio, rng);
    const Var v = stack_rows(originals);
    Phase1Losses out;
    out.l_c = loss_cross_contrastive(d1, d2, cfg.tau, cfg.normalize);
    out.l_s = scale(add(loss_self_contrastive(d1, v, cfg.tau, cfg.normalize),
                        loss_self_contrastive(d2, v, cfg.tau, cfg.normalize)),
                    0.5);
    out.total = add(scale(out.l_c, cfg.gamma_c), scale(out.l_s, cfg.gamma_s));
    return out;
}

StepResult phase1_step(const FmriMae& model, AdamW& opt, const std::vector<Tensor>& originals,
                       const Phase1Config& cfg, Rng& rng) {
    std::vector<Tensor> inputs;
    inputs.reserve(originals.size());
    for (const auto& v : originals) inputs.push_back(random_sparsify(v, cfg.rs_fraction, rng));
    opt.zero_grad();
    const Phase1Losses l = phase1_loss(model, inputs, originals, cfg, rng);
    StepResult r{l.l_c.item(), l.l_s.item(), l.total.item()};
    if (!std::isfinite(r.total)) {
        std::ostringstream msg;
        msg << "phase1: non-finite loss (L_C=" << r.l_c << ", L_S=" << r.l_s << ")";
        throw NumericalError(msg.str());
    }
    backward(l.total);
    opt.step();
    return r;
}

TrainLog train_phase1(const FmriMae& model, const std::vector<Tensor>& data, const Phase1Config& cfg,
                      const std::function<void(const std::vector<double>&)>& on_step) {
    cfg.validate();
    if (data.empty()) throw ContractError("train_phase1: no training data");
    AdamW opt(model.mae.params(), {cfg.lr, 0.9, 0.95, 1e-8, cfg.weight_decay});
    const Schedule sched{cfg.epochs, cfg.batch, cfg.max_steps, cfg.lr, cfg.min_lr, cfg.warmup_frac, cfg.seed};
    return train_loop(
        data.size(), sched, opt, {"L_C", "L_S", "L"},
        [&](const std::vector<std::size_t>& idx, Rng& rng) {
            std::vector<Tensor> batch;
            for (auto i : idx) batch.push_back(data[i]);
            const StepResult r = phase1_step(model, opt, batch, cfg, rng);
            return std::vector<double>{r.l_c, r.l_s, r.total};
        },
        on_step);
}

}  // namespace neurodec
