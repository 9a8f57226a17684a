#pragma once

// Conditional latent diffusion: noise schedule, the doubly conditioned
// denoiser (cross-attention on condition tokens + pooled condition added to
// the time embedding), training steps and DDPM / PLMS samplers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "neurodec/nn.hpp"
#include "neurodec/train_log.hpp"

namespace neurodec {

struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta, alpha, alpha_bar;

    static NoiseSchedule linear(std::size_t T = 1000, double beta_start = 1e-4, double beta_end = 0.02);
    void validate() const;
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s);

struct DenoiserConfig {
    std::size_t latent_size = 8;  // spatial side
    std::size_t latent_channels = 4;
    std::size_t channels = 32;
    std::size_t time_dim = 128;
    std::size_t sin_dim = 64;
    std::size_t cond_width = 64;
    std::size_t ca_heads = 2;
    std::size_t T = 1000;
    // Time-path conditioning: 0 projects the token mean, otherwise the
    // flattened tokens (the condition must then have exactly this many rows).
    std::size_t cond_tokens = 0;
};

// Pre-norm residual block with time-embedding injection; 1x1 skip when the
// channel count changes.
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(std::size_t in, std::size_t out, std::size_t time_dim, Rng& rng);
    Var operator()(const Var& x, const Var& temb, std::size_t h, std::size_t w) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    nn::LayerNorm norm1, norm2;
    nn::Conv2d conv1, conv2, skip;
    nn::Linear time_proj;
    bool has_skip = false;
};

// x + CA(LN(x), cond): queries from spatial positions, keys/values from
// condition tokens.
class CrossAttnBlock {
public:
    CrossAttnBlock() = default;
    CrossAttnBlock(std::size_t channels, std::size_t cond_width, std::size_t heads, Rng& rng);
    Var operator()(const Var& x, const Var& cond) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    nn::LayerNorm norm;
    nn::CrossAttention attn;
};

// Parameter groups: "ca.*" cross-attention blocks, "cond.*" the condition
// projection into the time embedding, everything else is the backbone.
class CondDenoiser {
public:
    CondDenoiser() = default;
    CondDenoiser(const DenoiserConfig& cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }
    // z_t: (s*s x c) latent, cond: (L x cond_width) tokens.
    Var operator()(const Var& z_t, std::size_t t, const Var& cond) const;

    void collect(ParamSet& ps, const std::string& prefix = {}) const;
    ParamSet params() const;
    ParamSet conditioning_params() const;  // ca.* and cond.*
    ParamSet backbone_params() const;

    nn::TimeEmbedding time;
    nn::Linear cond_proj;
    nn::Conv2d conv_in;
    ResBlock res1, res2, mid, res3;
    CrossAttnBlock ca1, ca2, ca3;
    nn::Conv2d down, up;
    nn::Conv2d conv_out;

private:
    DenoiserConfig cfg_;
};

// Learned per-class condition tokens standing in for fMRI tokens during
// label-conditioned pretraining.
class ClassEmbedding {
public:
    ClassEmbedding() = default;
    ClassEmbedding(std::size_t n_classes, std::size_t tokens, std::size_t width, Rng& rng);
    Var operator()(std::size_t label) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::size_t tokens = 4;
    Var table;  // (n_classes * tokens) x width
};

// Per-element noise-prediction MSE for one sample.
Var denoise_loss(const CondDenoiser& model, const Tensor& z0, std::size_t t, const Tensor& eps, const Var& cond,
                 const NoiseSchedule& s);

// Condition tokens for batch row i.
using CondFn = std::function<Var(std::size_t)>;

struct DiffusionTrainConfig {
    Schedule schedule{4, 8, 0, 1e-3, 1e-5, 0.05, 0};
    double weight_decay = 0.0;
};

// One step over a batch: t ~ U[0, T), eps ~ N(0, I) per sample; returns the mean loss.
double diffusion_step(const CondDenoiser& model, AdamW& opt, const std::vector<Tensor>& latents,
                      const std::vector<std::size_t>& batch, const CondFn& cond, const NoiseSchedule& s, Rng& rng);

// Label-conditioned pretraining; trains the whole denoiser and the class
// embedding. Log: step, loss, lr.
TrainLog pretrain_ldm(const CondDenoiser& model, const ClassEmbedding& classes, const std::vector<Tensor>& latents,
                      const std::vector<std::size_t>& labels, const NoiseSchedule& s, const DiffusionTrainConfig& cfg,
                      const std::function<void(const std::vector<double>&)>& on_step = {});

// Fine-tuning with fMRI condition tokens. Only `trainable` is updated (the
// conditioning parameters plus the fMRI encoder); everything else in the
// denoiser is frozen. Log: step, loss, lr.
TrainLog finetune_ldm(const CondDenoiser& model, const ParamSet& trainable, const std::vector<Tensor>& latents,
                      const CondFn& cond, const NoiseSchedule& s, const DiffusionTrainConfig& cfg,
                      const std::function<void(const std::vector<double>&)>& on_step = {});

// Noise predictor used by the samplers: eps_hat = f(z_t, t).
using EpsFn = std::function<Tensor(const Tensor&, std::size_t)>;
EpsFn make_eps_fn(const CondDenoiser& model, const Tensor& cond);

// Descending timesteps: `steps` evenly spaced values in [0, T).
std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps);

// Ancestral sampling with posterior variance over the timestep subsequence.
Tensor ddpm_sample(const EpsFn& eps, const NoiseSchedule& s, std::size_t steps, const Tensor& z_T, Rng& rng);
// Pseudo-linear multistep (deterministic given z_T). One step is a single
// DDIM-style Euler update.
Tensor plms_sample(const EpsFn& eps, const NoiseSchedule& s, std::size_t steps, const Tensor& z_T);

// Mean denoising loss of each sample under its own condition vs. a shuffled
// condition, with shared (t, eps) draws. Returns {matched, shuffled}.
std::pair<double, double> conditioning_gap(const CondDenoiser& model, const std::vector<Tensor>& latents,
                                           const std::vector<Tensor>& conds, const NoiseSchedule& s,
                                           std::size_t draws, std::uint64_t seed);

}  // namespace neurodec
