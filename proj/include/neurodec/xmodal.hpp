#pragma once

// Cross-modal tuning: the fMRI auto-encoder and an image MAE guide each
// other's reconstructions through cross-attention.
//
//   v^d = D_F(h_F + CA_F(Q <- h_I, K,V <- h_F))
//   u^d = D_I(h_I + CA_I(Q <- h_F, K,V <- h_I))
//
// h_F, h_I are the full-length decoder inputs of the two auto-encoders.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "neurodec/dcmae.hpp"

namespace neurodec {

// Image raster (s*s x 3) <-> MAE patch matrix.
class ImageMae {
public:
    ImageMae() = default;
    ImageMae(const MaeConfig& mae, std::size_t image_size, std::size_t patch, Rng& rng);

    std::size_t image_size() const { return image_size_; }
    std::size_t patch() const { return patch_; }
    Var patches(const Tensor& image) const;
    Var to_image(const Var& patches) const;

    MaskedAutoencoder mae;

private:
    std::size_t image_size_ = 32;
    std::size_t patch_ = 4;
};

struct ImagePretrainConfig {
    double mask_ratio = 0.75;
    std::size_t epochs = 1;
    std::size_t batch = 8;
    std::size_t max_steps = 0;
    double lr = 1e-3;
    double weight_decay = 0.05;
    double warmup_frac = 0.05;
    std::uint64_t seed = 0;
};
// MAE objective: MSE over masked patches. Log columns: step, loss, lr.
TrainLog pretrain_image_mae(const ImageMae& model, const std::vector<Tensor>& images, const ImagePretrainConfig& cfg);

struct Phase2Config {
    double gamma_f = 1.0;
    double gamma_i = 1.0;
    double fmri_mask_ratio = 0.75;
    double image_mask_ratio = 0.75;
    bool masked_only = false;
    double ca_init_scale = 0.1;
    std::size_t epochs = 1;
    std::size_t batch = 8;
    std::size_t max_steps = 0;
    double lr = 5e-4;
    double weight_decay = 0.05;
    double warmup_frac = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

struct XModalModel {
    FmriMae fmri;
    ImageMae image;
    nn::CrossAttentionParams ca_f;  // Q: image width, K/V: fMRI width
    nn::CrossAttentionParams ca_i;  // Q: fMRI width, K/V: image width

    static XModalModel create(FmriMae fmri, ImageMae image, double ca_scale, Rng& rng);
    ParamSet params() const;
    // Everything except the image decoder.
    ParamSet trainable() const;
    ParamSet frozen() const;
};

// Decoder inputs must have equal token counts (the fusion is additive).
Var reconstruct_fmri_guided(const XModalModel& m, const Var& h_f, const Var& h_i);
Var reconstruct_image_guided(const XModalModel& m, const Var& h_i, const Var& h_f);

struct XModalForward {
    MaeEncoding enc_f, enc_i;
    Var v_decoded;  // fMRI patch matrix
    Var u_decoded;  // image patch matrix
};
XModalForward xmodal_forward(const XModalModel& m, const Tensor& voxels, const Tensor& image, const Phase2Config& cfg,
                             Rng& rng);

struct Phase2Losses {
    Var l_f, l_i, total;
};
Phase2Losses phase2_loss(const XModalModel& m, const std::vector<Tensor>& voxels, const std::vector<Tensor>& images,
                         const Phase2Config& cfg, Rng& rng);

struct Phase2Step {
    double l_f = 0, l_i = 0, total = 0;
};
Phase2Step phase2_step(const XModalModel& m, AdamW& opt, const std::vector<Tensor>& voxels,
                       const std::vector<Tensor>& images, const Phase2Config& cfg, Rng& rng);

// Log columns: step, L_f, L_i, L, lr.
TrainLog train_phase2(const XModalModel& m, const std::vector<Tensor>& voxels, const std::vector<Tensor>& images,
                      const Phase2Config& cfg, const std::function<void(const std::vector<double>&)>& on_step = {});

}  // namespace neurodec
