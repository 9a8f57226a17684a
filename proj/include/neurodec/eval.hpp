#pragma once

// Semantic n-way top-k evaluation with a small convolutional classifier.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "neurodec/nn.hpp"
#include "neurodec/train_log.hpp"

namespace neurodec {

struct ClassifierConfig {
    std::size_t image_size = 32;
    std::size_t n_classes = 10;
    std::size_t channels = 16;
    Schedule schedule{6, 16, 0, 3e-3, 1e-4, 0.05, 0};
    double weight_decay = 1e-4;
};

// conv s2 -> conv s2 -> conv s2 -> mean pool -> linear -> softmax
class Classifier {
public:
    Classifier() = default;
    Classifier(const ClassifierConfig& cfg, Rng& rng);

    std::size_t n_classes() const { return n_classes_; }
    std::size_t image_size() const { return image_size_; }
    Var logits(const Var& image) const;  // (h*w x 3) -> (1 x C)
    std::vector<double> probabilities(const Tensor& image) const;
    std::size_t predict(const Tensor& image) const;

    void collect(ParamSet& ps, const std::string& prefix = {}) const;
    ParamSet params() const;

    nn::Conv2d c1, c2, c3;
    nn::Linear head;

private:
    std::size_t image_size_ = 32;
    std::size_t n_classes_ = 10;
};

// Cross-entropy training with light augmentation (random flips). Log: step, loss, lr.
TrainLog train_toy_classifier(Classifier& clf, const std::vector<Tensor>& images,
                              const std::vector<std::size_t>& labels, const ClassifierConfig& cfg);

double classifier_accuracy(const Classifier& clf, const std::vector<Tensor>& images,
                           const std::vector<std::size_t>& labels);

// Success test for one trial: probabilities over all classes, the true
// class, n candidates and top-k.
bool nway_trial(const std::vector<double>& probs, std::size_t y_gt, std::size_t n, std::size_t k, Rng& rng);

struct PairResult {
    std::size_t y_gt = 0;
    std::size_t y_gen = 0;  // argmax over the generated image
    std::size_t successes = 0;
    double sr = 0;
};

struct EvalReport {
    std::size_t n = 0, k = 0, trials = 0;
    std::uint64_t seed = 0;
    std::size_t successes = 0;  // summed over pairs
    std::size_t total_trials = 0;
    double success_rate = 0;  // successes / total_trials
    std::vector<PairResult> per_image;

    nlohmann::json to_json() const;
    void write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const;
};

// One pair from precomputed probabilities.
PairResult nway_topk_probs(const std::vector<double>& gen_probs, std::size_t y_gt, std::size_t n, std::size_t k,
                           std::size_t trials, Rng& rng);

// Single image pair: y_gt from the classifier on the ground truth.
EvalReport nway_topk(const Tensor& generated, const Tensor& ground_truth, const Classifier& clf, std::size_t n,
                     std::size_t k, std::size_t trials, std::uint64_t seed);

// Many pairs with per-pair rng streams. When `labels` is non-empty it
// replaces the classifier's ground-truth prediction.
EvalReport evaluate_pairs(const std::vector<Tensor>& generated, const std::vector<Tensor>& ground_truth,
                          const Classifier& clf, std::size_t n, std::size_t k, std::size_t trials,
                          std::uint64_t seed, const std::vector<std::size_t>& labels = {});

}  // namespace neurodec
