#pragma once

// Small continuous convolutional auto-encoder giving the diffusion latent
// space: 32x32x3 raster <-> 8x8x4 latent (channels-last rows).

#include <cstddef>
#include <cstdint>
#include <vector>

#include "neurodec/nn.hpp"
#include "neurodec/train_log.hpp"

namespace neurodec {

struct LatentAeConfig {
    std::size_t image_size = 32;
    std::size_t channels = 32;
    std::size_t latent_channels = 4;
    double latent_penalty = 1e-4;
    Schedule schedule{4, 8, 0, 2e-3, 1e-4, 0.05, 0};
};

class LatentAE {
public:
    LatentAE() = default;
    LatentAE(const LatentAeConfig& cfg, Rng& rng);

    std::size_t image_size() const { return image_size_; }
    std::size_t latent_size() const { return image_size_ / 4; }
    std::size_t latent_channels() const { return latent_channels_; }

    // Raw encoder / decoder (unscaled latent).
    Var encode_raw(const Var& image) const;
    Var decode_raw(const Var& latent) const;
    // Unit-variance latent space used by the diffusion model.
    Tensor encode(const Tensor& image) const;
    Tensor decode(const Tensor& latent) const;

    void collect(ParamSet& ps, const std::string& prefix = {}) const;
    ParamSet params() const;

    double latent_scale = 1.0;  // multiplies raw latents

    nn::Conv2d enc1, enc2, enc3;
    nn::Conv2d dec1, dec2, dec3, dec4;

private:
    std::size_t image_size_ = 32;
    std::size_t latent_channels_ = 4;
};

// Reconstruction MSE plus a small latent magnitude penalty; afterwards sets
// latent_scale = 1 / rms(raw latents over `images`). Log: step, mse, lr.
TrainLog train_latent_ae(LatentAE& ae, const std::vector<Tensor>& images, const LatentAeConfig& cfg);

}  // namespace neurodec
