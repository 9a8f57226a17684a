#pragma once

// Synthetic paired (fMRI, image, label) data.
//
// Images are 32x32 RGB scenes of one coloured shape; the (shape, colour)
// pair is the class, position and size are nuisance jitter. Voxels are a
// smoothed per-subject linear encoding of pooled image features plus
// Gaussian and low-rank background noise.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "neurodec/tensor.hpp"

namespace neurodec {

struct SynthConfig {
    std::size_t n_voxels = 1024;
    std::size_t image_size = 32;
    std::size_t n_classes = 10;
    std::size_t n_subjects = 3;
    std::size_t train_per_class = 40;  // per subject
    std::size_t test_per_class = 5;    // per subject
    double snr = 1.0;
    std::size_t redundancy_len = 8;
    double subject_variation = 0.5;
    std::size_t background_rank = 4;
    std::size_t holdout_classes = 0;   // last classes appear only in test
    std::size_t patch = 16;            // n_voxels must divide by this
    std::uint64_t seed = 0;

    void validate() const;
};

struct PairedDataset {
    SynthConfig config;
    Tensor voxels;                   // N x n_voxels
    Tensor images;                   // N x (h*w*3), channels-last, values in [0,1]
    std::vector<std::size_t> labels;
    std::vector<std::size_t> subjects;
    std::vector<std::size_t> train;  // sample indices
    std::vector<std::size_t> test;

    std::size_t size() const { return labels.size(); }
    std::size_t n_voxels() const { return voxels.cols(); }
    std::size_t image_size() const { return config.image_size; }
    // Single rows as (1 x n_voxels) and (h*w x 3).
    Tensor voxel_row(std::size_t i) const;
    Tensor image(std::size_t i) const;
    // Split members restricted to one subject (all subjects when npos).
    std::vector<std::size_t> select(const std::vector<std::size_t>& split, std::size_t subject) const;
};

inline constexpr int kDatasetVersion = 1;

// Noise-free scene for class `label`; jitter drawn from `rng_seed`.
Tensor render_scene(std::size_t label, std::size_t size, std::uint64_t rng_seed, std::size_t n_classes = 10);

PairedDataset generate(const SynthConfig& config);

void save_dataset(const std::filesystem::path& dir, const PairedDataset& ds);
PairedDataset load_dataset(const std::filesystem::path& dir);

// Closed-form ridge regression from voxels to one-hot class targets;
// returns test accuracy.
double ridge_probe_accuracy(const PairedDataset& ds, const std::vector<std::size_t>& train,
                            const std::vector<std::size_t>& test, double lambda);

// Same probe over arbitrary feature rows.
double ridge_probe_accuracy(const Tensor& train_x, const std::vector<std::size_t>& train_y, const Tensor& test_x,
                            const std::vector<std::size_t>& test_y, std::size_t n_classes, double lambda);

double pearson(const double* a, const double* b, std::size_t n);

}  // namespace neurodec
