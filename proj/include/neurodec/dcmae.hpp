#pragma once

// Double-contrastive MAE pretraining of the fMRI auto-encoder.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "neurodec/mae.hpp"
#include "neurodec/optim.hpp"
#include "neurodec/train_log.hpp"

namespace neurodec {

// InfoNCE with anchor-anchor negatives, batch mean:
//   mean_i -log[ e^{a_i.p_i/tau} / (e^{a_i.p_i/tau} + sum_{j!=i} e^{a_i.a_j/tau}) ]
// Cross-contrastive: anchors = first decodings, positives = second.
// Self-contrastive: anchors = decodings, positives = originals.
Var contrastive_loss(const Var& anchors, const Var& positives, double tau, bool normalize = false);
Var loss_cross_contrastive(const Var& d1, const Var& d2, double tau, bool normalize = false);
Var loss_self_contrastive(const Var& decoded, const Var& originals, double tau, bool normalize = false);

struct Phase1Config {
    MaeConfig mae;
    std::size_t patch = 16;
    double mask_ratio = 0.5;
    double tau = 0.1;
    double gamma_c = 1.0;
    double gamma_s = 1.0;
    double rs_fraction = 0.2;
    bool normalize = false;
    std::size_t epochs = 2;
    std::size_t batch = 8;
    std::size_t max_steps = 0;  // 0: epochs * ceil(N / batch)
    double lr = 1e-3;
    double min_lr = 0.0;
    double weight_decay = 0.05;
    double warmup_frac = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

// fMRI auto-encoder: voxel vectors in, voxel vectors out.
class FmriMae {
public:
    FmriMae() = default;
    FmriMae(const MaeConfig& mae, std::size_t n_voxels, std::size_t patch, Rng& rng);

    std::size_t n_voxels() const { return n_voxels_; }
    std::size_t patch() const { return patch_; }
    // (1 x N) voxels to the (P x patch) patch matrix.
    Var patches(const Tensor& voxels) const;
    // Decoded patch matrix back to (1 x N), dropping padding.
    Var flatten(const Var& decoded_patches, const MaskedSequence& mask) const;
    Var reconstruct(const Tensor& voxels, double mask_ratio, Rng& rng) const;
    // Unmasked encoder tokens (P x dim).
    Var encode_tokens(const Tensor& voxels) const;

    MaskedAutoencoder mae;

private:
    std::size_t n_voxels_ = 0;
    std::size_t patch_ = 16;
};

// Two independent maskings of each sample through the same weights:
// returns (n x N) first and second decodings.
std::pair<Var, Var> forward_twice(const FmriMae& model, const std::vector<Tensor>& batch, double mask_ratio,
                                  Rng& rng);

struct Phase1Losses {
    Var l_c, l_s, total;
};
// Weighted contrastive composite; inputs may be sparsified, originals are the targets.
Phase1Losses phase1_loss(const FmriMae& model, const std::vector<Tensor>& inputs,
                         const std::vector<Tensor>& originals, const Phase1Config& cfg, Rng& rng);

struct StepResult {
    double l_c = 0, l_s = 0, total = 0;
};
// One optimizer step; throws NumericalError (with the offending components)
// if the loss is not finite.
StepResult phase1_step(const FmriMae& model, AdamW& opt, const std::vector<Tensor>& originals,
                       const Phase1Config& cfg, Rng& rng);

// Trains on the given voxel rows. Log columns: step, L_C, L_S, L, lr.
TrainLog train_phase1(const FmriMae& model, const std::vector<Tensor>& data, const Phase1Config& cfg,
                      const std::function<void(const std::vector<double>&)>& on_step = {});

}  // namespace neurodec
