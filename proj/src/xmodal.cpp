#include "neurodec/xmodal.hpp"

#include <cmath>
#include <sstream>

#include "neurodec/errors.hpp"

namespace neurodec {

ImageMae::ImageMae(const MaeConfig& mae_cfg, std::size_t image_size, std::size_t patch, Rng& rng)
    : image_size_(image_size), patch_(patch) {
    if (patch == 0 || image_size % patch != 0) throw ConfigError("image mae: image size not divisible by patch");
    MaeConfig cfg = mae_cfg;
    cfg.num_patches = (image_size / patch) * (image_size / patch);
    cfg.patch_dim = patch * patch * 3;
    mae = MaskedAutoencoder(cfg, rng);
}

Var ImageMae::patches(const Tensor& image) const {
    return Var(patchify_image(image, image_size_, image_size_, patch_));
}

Var ImageMae::to_image(const Var& p) const { return unpatchify_image(p, image_size_, image_size_, 3, patch_); }

namespace {

Var masked_mse(const Var& pred, const Var& target, const MaskedSequence& mask) {
    if (mask.mask_indices.empty()) return mse(pred, target);
    return mse(gather_rows(pred, mask.mask_indices), gather_rows(target, mask.mask_indices));
}

Var batch_mean(const std::vector<Var>& terms) {
    return scale(sum(concat_cols(terms)), 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

TrainLog pretrain_image_mae(const ImageMae& model, const std::vector<Tensor>& images, const ImagePretrainConfig& cfg) {
    AdamW opt(model.mae.params(), {cfg.lr, 0.9, 0.95, 1e-8, cfg.weight_decay});
    const Schedule sched{cfg.epochs, cfg.batch, cfg.max_steps, cfg.lr, 0.0, cfg.warmup_frac, cfg.seed};
    return train_loop(images.size(), sched, opt, {"loss"}, [&](const std::vector<std::size_t>& idx, Rng& rng) {
        opt.zero_grad();
        std::vector<Var> terms;
        for (auto i : idx) {
            const Var target = model.patches(images[i]);
            const MaeEncoding enc = model.mae.encode(target, cfg.mask_ratio, rng);
            terms.push_back(reshape(masked_mse(model.mae.decode(model.mae.decoder_input(enc)), target, enc.mask), {1, 1}));
        }
        const Var loss = batch_mean(terms);
        if (!std::isfinite(loss.item())) throw NumericalError("image mae: non-finite loss");
        backward(loss);
        opt.step();
        return std::vector<double>{loss.item()};
    });
}

void Phase2Config::validate() const {
    if (gamma_f < 0.0 || gamma_i < 0.0) throw ConfigError("xtune: loss weights must be non-negative");
    if (!(fmri_mask_ratio >= 0.0 && fmri_mask_ratio < 1.0) || !(image_mask_ratio >= 0.0 && image_mask_ratio < 1.0)) {
        throw ConfigError("xtune: mask ratios must be in [0, 1)");
    }
    if (batch == 0) throw ConfigError("xtune: batch must be >= 1");
}

XModalModel XModalModel::create(FmriMae fmri, ImageMae image, double ca_scale, Rng& rng) {
    XModalModel m{std::move(fmri), std::move(image), {}, {}};
    const std::size_t wf = m.fmri.mae.config().dec_dim, wi = m.image.mae.config().dec_dim;
    if (ca_scale == 0.0) {
        m.ca_f = nn::CrossAttentionParams::zeros(wi, wf, wf);
        m.ca_i = nn::CrossAttentionParams::zeros(wf, wi, wi);
    } else {
        m.ca_f = nn::CrossAttentionParams::init(wi, wf, wf, rng, ca_scale);
        m.ca_i = nn::CrossAttentionParams::init(wf, wi, wi, rng, ca_scale);
    }
    return m;
}

ParamSet XModalModel::params() const {
    ParamSet ps;
    fmri.mae.collect(ps, "fmri.");
    image.mae.collect(ps, "image.");
    ca_f.collect(ps, "ca_f.");
    ca_i.collect(ps, "ca_i.");
    return ps;
}

ParamSet XModalModel::trainable() const {
    return params().filter([](const NamedParam& p) { return p.name.rfind("image.decoder.", 0) != 0; });
}

ParamSet XModalModel::frozen() const { return params().with_prefix("image.decoder."); }

namespace {

void check_paired(const Var& a, const Var& b) {
    if (a.value().rows() != b.value().rows()) {
        throw ShapeError("xmodal: unpaired shapes, fMRI/image token counts " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Var reconstruct_fmri_guided(const XModalModel& m, const Var& h_f, const Var& h_i) {
    check_paired(h_f, h_i);
    return m.fmri.mae.decode(add(h_f, nn::cross_attention(h_i, h_f, m.ca_f)));
}

Var reconstruct_image_guided(const XModalModel& m, const Var& h_i, const Var& h_f) {
    check_paired(h_f, h_i);
    return m.image.mae.decode(add(h_i, nn::cross_attention(h_f, h_i, m.ca_i)));
}

XModalForward xmodal_forward(const XModalModel& m, const Tensor& voxels, const Tensor& image, const Phase2Config& cfg,
                             Rng& rng) {
    XModalForward f;
    f.enc_f = m.fmri.mae.encode(m.fmri.patches(voxels), cfg.fmri_mask_ratio, rng);
    f.enc_i = m.image.mae.encode(m.image.patches(image), cfg.image_mask_ratio, rng);
    const Var h_f = m.fmri.mae.decoder_input(f.enc_f);
    const Var h_i = m.image.mae.decoder_input(f.enc_i);
    f.v_decoded = reconstruct_fmri_guided(m, h_f, h_i);
    f.u_decoded = reconstruct_image_guided(m, h_i, h_f);
    return f;
}

Phase2Losses phase2_loss(const XModalModel& m, const std::vector<Tensor>& voxels, const std::vector<Tensor>& images,
                         const Phase2Config& cfg, Rng& rng) {
    if (voxels.size() != images.size() || voxels.empty()) throw ShapeError("xmodal: batch is not paired");
    std::vector<Var> lf, li;
    for (std::size_t b = 0; b < voxels.size(); ++b) {
        const XModalForward f = xmodal_forward(m, voxels[b], images[b], cfg, rng);
        const Var v_target = m.fmri.patches(voxels[b]);
        const Var u_target = m.image.patches(images[b]);
        if (cfg.masked_only) {
            lf.push_back(reshape(masked_mse(f.v_decoded, v_target, f.enc_f.mask), {1, 1}));
            li.push_back(reshape(masked_mse(f.u_decoded, u_target, f.enc_i.mask), {1, 1}));
        } else {
            lf.push_back(reshape(mse(m.fmri.flatten(f.v_decoded, f.enc_f.mask), Var(voxels[b].reshaped({1, voxels[b].numel()}))), {1, 1}));
            li.push_back(reshape(mse(f.u_decoded, u_target), {1, 1}));
        }
    }
    Phase2Losses out;
    out.l_f = batch_mean(lf);
    out.l_i = batch_mean(li);
    out.total = add(scale(out.l_f, cfg.gamma_f), scale(out.l_i, cfg.gamma_i));
    return out;
}

Phase2Step phase2_step(const XModalModel& m, AdamW& opt, const std::vector<Tensor>& voxels,
                       const std::vector<Tensor>& images, const Phase2Config& cfg, Rng& rng) {
    opt.zero_grad();
    const Phase2Losses l = phase2_loss(m, voxels, images, cfg, rng);
    Phase2Step r{l.l_f.item(), l.l_i.item(), l.total.item()};
    if (!std::isfinite(r.total)) {
        std::ostringstream msg;
        msg << "xtune: non-finite loss (L_f=" << r.l_f << ", L_i=" << r.l_i << ")";
        throw NumericalError(msg.str());
    }
    backward(l.total);
    opt.step();
    return r;
}

TrainLog train_phase2(const XModalModel& m, const std::vector<Tensor>& voxels, const std::vector<Tensor>& images,
                      const Phase2Config& cfg, const std::function<void(const std::vector<double>&)>& on_step) {
    cfg.validate();
    if (voxels.size() != images.size()) throw ShapeError("xtune: voxel and image counts differ");
    AdamW opt(m.trainable(), {cfg.lr, 0.9, 0.95, 1e-8, cfg.weight_decay});
    const FreezeGuard freeze(m.frozen());
    const Schedule sched{cfg.epochs, cfg.batch, cfg.max_steps, cfg.lr, 0.0, cfg.warmup_frac, cfg.seed};
    return train_loop(
        voxels.size(), sched, opt, {"L_f", "L_i", "L"},
        [&](const std::vector<std::size_t>& idx, Rng& rng) {
            std::vector<Tensor> v, u;
            for (auto i : idx) {
                v.push_back(voxels[i]);
                u.push_back(images[i]);
            }
            const Phase2Step r = phase2_step(m, opt, v, u, cfg, rng);
            return std::vector<double>{r.l_f, r.l_i, r.total};
        },
        on_step);
}

}  // namespace neurodec
