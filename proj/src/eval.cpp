#include "neurodec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "neurodec/errors.hpp"

namespace neurodec {

Classifier::Classifier(const ClassifierConfig& cfg, Rng& rng)
    : c1(3, cfg.channels, 3, 2, 1, rng),
      c2(cfg.channels, 2 * cfg.channels, 3, 2, 1, rng),
      c3(2 * cfg.channels, 2 * cfg.channels, 3, 2, 1, rng),
      head(2 * cfg.channels, cfg.n_classes, rng),
      image_size_(cfg.image_size),
      n_classes_(cfg.n_classes) {
    if (cfg.n_classes < 2) throw ConfigError("classifier: need at least 2 classes, got " + std::to_string(cfg.n_classes));
    if (cfg.image_size % 8 != 0) throw ConfigError("classifier: image size must be a multiple of 8");
}

Var Classifier::logits(const Var& image) const {
    const std::size_t s = image_size_;
    if (image.value().rank() != 2 || image.value().rows() != s * s || image.value().cols() != 3) {
        throw ShapeError("classifier: image " + shape_str(image.shape()) + ", expected [" + std::to_string(s * s) + "x3]");
    }
    Var h = silu(c1(image, s, s));
    h = silu(c2(h, s / 2, s / 2));
    h = silu(c3(h, s / 4, s / 4));
    return head(mean_rows(h));
}

std::vector<double> Classifier::probabilities(const Tensor& image) const {
    NoGradGuard ng;
    const Tensor p = softmax(logits(Var(image)), 1).value();
    return {p.data(), p.data() + p.numel()};
}

std::size_t Classifier::predict(const Tensor& image) const {
    const auto p = probabilities(image);
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

void Classifier::collect(ParamSet& ps, const std::string& prefix) const {
    c1.collect(ps, prefix + "c1.");
    c2.collect(ps, prefix + "c2.");
    c3.collect(ps, prefix + "c3.");
    head.collect(ps, prefix + "head.");
}

ParamSet Classifier::params() const {
    ParamSet ps;
    collect(ps);
    return ps;
}

namespace {

Tensor hflip(const Tensor& img, std::size_t s) {
    Tensor out(img.shape());
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(y * s + x, c) = img.at(y * s + (s - 1 - x), c);
    return out;
}

}  // namespace

TrainLog train_toy_classifier(Classifier& clf, const std::vector<Tensor>& images,
                              const std::vector<std::size_t>& labels, const ClassifierConfig& cfg) {
    if (images.size() != labels.size()) throw ShapeError("classifier: images and labels differ in count");
    std::vector<bool> seen(clf.n_classes(), false);
    std::size_t distinct = 0;
    for (auto y : labels) {
        if (y >= clf.n_classes()) throw ContractError("classifier: label " + std::to_string(y) + " out of range");
        if (!seen[y]) ++distinct, seen[y] = true;
    }
    if (distinct < 2) throw ContractError("classifier: training data has fewer than 2 classes");
    AdamW opt(clf.params(), {cfg.schedule.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    return train_loop(images.size(), cfg.schedule, opt, {"loss"},
                      [&](const std::vector<std::size_t>& idx, Rng& rng) {
                          opt.zero_grad();
                          std::vector<Var> rows;
                          std::vector<std::size_t> ys;
                          for (auto i : idx) {
                              const bool flip = rng.uniform() < 0.5;
                              rows.push_back(clf.logits(Var(flip ? hflip(images[i], cfg.image_size) : images[i])));
                              ys.push_back(labels[i]);
                          }
                          const Var loss = cross_entropy(concat_rows(rows), ys);
                          if (!std::isfinite(loss.item())) throw NumericalError("classifier: non-finite loss");
                          backward(loss);
                          opt.step();
                          return std::vector<double>{loss.item()};
                      });
}

double classifier_accuracy(const Classifier& clf, const std::vector<Tensor>& images,
                           const std::vector<std::size_t>& labels) {
    if (images.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < images.size(); ++i) hit += clf.predict(images[i]) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(images.size());
}

bool nway_trial(const std::vector<double>& probs, std::size_t y_gt, std::size_t n, std::size_t k, Rng& rng) {
    const std::size_t c = probs.size();
    if (n < 1 || n > c) throw ContractError("nway: n=" + std::to_string(n) + " must be in [1, " + std::to_string(c) + "]");
    if (k < 1 || k > n) throw ContractError("nway: k=" + std::to_string(k) + " must be in [1, n=" + std::to_string(n) + "]");
    if (y_gt >= c) throw ContractError("nway: ground-truth class out of range");
    std::vector<std::size_t> cand{y_gt};
    for (auto j : rng.choose(c - 1, n - 1)) cand.push_back(j >= y_gt ? j + 1 : j);
    // random order first so equal probabilities rank uniformly at random
    const auto perm = rng.permutation(n);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = cand[perm[i]];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    return std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), y_gt) !=
           order.begin() + static_cast<std::ptrdiff_t>(k);
}

PairResult nway_topk_probs(const std::vector<double>& gen_probs, std::size_t y_gt, std::size_t n, std::size_t k,
                           std::size_t trials, Rng& rng) {
    if (trials == 0) throw ContractError("nway: trials must be >= 1");
    PairResult r;
    r.y_gt = y_gt;
    r.y_gen = static_cast<std::size_t>(std::max_element(gen_probs.begin(), gen_probs.end()) - gen_probs.begin());
    for (std::size_t t = 0; t < trials; ++t) r.successes += nway_trial(gen_probs, y_gt, n, k, rng);
    r.sr = static_cast<double>(r.successes) / static_cast<double>(trials);
    return r;
}

EvalReport nway_topk(const Tensor& generated, const Tensor& ground_truth, const Classifier& clf, std::size_t n,
                     std::size_t k, std::size_t trials, std::uint64_t seed) {
    return evaluate_pairs({generated}, {ground_truth}, clf, n, k, trials, seed);
}

EvalReport evaluate_pairs(const std::vector<Tensor>& generated, const std::vector<Tensor>& ground_truth,
                          const Classifier& clf, std::size_t n, std::size_t k, std::size_t trials,
                          std::uint64_t seed, const std::vector<std::size_t>& labels) {
    if (generated.size() != ground_truth.size()) throw ShapeError("evaluate: generated and ground-truth counts differ");
    if (!labels.empty() && labels.size() != generated.size()) throw ShapeError("evaluate: label count mismatch");
    if (n > clf.n_classes()) throw ContractError("nway: n=" + std::to_string(n) + " exceeds classifier classes " +
                                                 std::to_string(clf.n_classes()));
    if (k > n) throw ContractError("nway: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
    EvalReport rep;
    rep.n = n;
    rep.k = k;
    rep.trials = trials;
    rep.seed = seed;
    rep.per_image.resize(generated.size());
    const Rng root(seed);
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < generated.size(); ++i) {
        const std::size_t y = labels.empty() ? clf.predict(ground_truth[i]) : labels[i];
        Rng rng = root.derive(i);
        rep.per_image[i] = nway_topk_probs(clf.probabilities(generated[i]), y, n, k, trials, rng);
    }
    for (const auto& p : rep.per_image) rep.successes += p.successes;
    rep.total_trials = trials * generated.size();
    rep.success_rate = rep.total_trials ? static_cast<double>(rep.successes) / static_cast<double>(rep.total_trials) : 0;
    return rep;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["n"] = n;
    j["k"] = k;
    j["trials"] = trials;
    j["seed"] = seed;
    j["successes"] = successes;
    j["total_trials"] = total_trials;
    j["mean_sr"] = success_rate;
    auto& arr = j["per_image"] = nlohmann::json::array();
    for (std::size_t i = 0; i < per_image.size(); ++i) {
        const auto& p = per_image[i];
        arr.push_back({{"index", i}, {"y_gt", p.y_gt}, {"y_gen", p.y_gen}, {"successes", p.successes}, {"sr", p.sr}});
    }
    return j;
}

void EvalReport::write(const std::filesystem::path& json_path, const std::filesystem::path& csv_path) const {
    {
        std::ofstream f(json_path);
        if (!f) throw IoError("cannot write " + json_path.string());
        f << to_json().dump(2) << '\n';
    }
    std::ofstream f(csv_path);
    if (!f) throw IoError("cannot write " + csv_path.string());
    f << "index,y_gt,y_gen,successes,sr\n";
    for (std::size_t i = 0; i < per_image.size(); ++i) {
        const auto& p = per_image[i];
        f << i << ',' << p.y_gt << ',' << p.y_gen << ',' << p.successes << ',' << p.sr << '\n';
    }
}

}  // namespace neurodec
