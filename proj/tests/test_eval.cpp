#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "neurodec/errors.hpp"
#include "neurodec/eval.hpp"
#include "neurodec/synth.hpp"

using namespace neurodec;

namespace {

std::size_t count_successes(const std::vector<double>& probs, std::size_t y, std::size_t n, std::size_t k,
                            std::size_t trials, std::uint64_t seed) {
    Rng rng(seed);
    std::size_t s = 0;
    for (std::size_t t = 0; t < trials; ++t) s += nway_trial(probs, y, n, k, rng);
    return s;
}

}  // namespace

TEST_CASE("uniform classifier succeeds at rate k over n") {
    struct Case {
        std::size_t c, n, k;
    };
    for (const auto [c, n, k] : {Case{10, 10, 1}, Case{50, 50, 1}, Case{50, 50, 5}, Case{50, 10, 3}}) {
        const std::vector<double> probs(c, 1.0 / static_cast<double>(c));
        const std::size_t N = 10000;
        const double p = static_cast<double>(k) / static_cast<double>(n);
        const double sr = static_cast<double>(count_successes(probs, 3, n, k, N, 100 + n + k)) / N;
        CHECK(std::abs(sr - p) <= 3.0 * std::sqrt(p * (1 - p) / N));
    }
}

TEST_CASE("success rate is monotone in k for fixed draws") {
    Rng rng(1);
    std::vector<double> probs(20);
    for (auto& p : probs) p = rng.uniform();
    std::size_t prev = 0;
    for (std::size_t k = 1; k <= 10; ++k) {
        const std::size_t s = count_successes(probs, 7, 10, k, 2000, 42);
        CHECK(s >= prev);
        prev = s;
    }
    CHECK(prev == 2000);
}

TEST_CASE("two-way top-1 equals the pairwise win rate") {
    Rng rng(2);
    std::vector<double> probs(10);
    for (auto& p : probs) p = rng.uniform();
    probs[4] = probs[1];  // one tie with the ground truth
    const std::size_t y = 1;
    double win = 0;
    for (std::size_t j = 0; j < 10; ++j) {
        if (j == y) continue;
        win += probs[y] > probs[j] ? 1.0 : (probs[y] == probs[j] ? 0.5 : 0.0);
    }
    win /= 9.0;
    const std::size_t N = 20000;
    const double sr = static_cast<double>(count_successes(probs, y, 2, 1, N, 3)) / N;
    CHECK(std::abs(sr - win) <= 3.0 * std::sqrt(win * (1 - win) / N));
}

TEST_CASE("trial outcome depends only on the candidate set") {
    Rng rng(3);
    std::vector<double> probs(12);
    for (auto& p : probs) p = rng.uniform();
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const std::size_t y = seed % 12, n = 5, k = 2;
        Rng a(seed);
        const bool hit = nway_trial(probs, y, n, k, a);
        // replay the candidate draw and rank without any ordering
        Rng b(seed);
        std::size_t better = 0;
        for (auto j : b.choose(11, n - 1)) better += probs[j >= y ? j + 1 : j] > probs[y];
        CHECK(hit == (better < k));
    }
}

TEST_CASE("nway argument validation") {
    const std::vector<double> probs(10, 0.1);
    Rng rng(4);
    CHECK_THROWS_AS(nway_trial(probs, 0, 11, 1, rng), ContractError);
    CHECK_THROWS_AS(nway_trial(probs, 0, 5, 6, rng), ContractError);
    CHECK_THROWS_AS(nway_trial(probs, 10, 5, 1, rng), ContractError);
}

TEST_CASE("report success rate is successes over trials") {
    Rng rng(5);
    std::vector<double> probs(10);
    for (auto& p : probs) p = rng.uniform();
    const PairResult r = nway_topk_probs(probs, 2, 10, 1, 777, rng);
    CHECK(r.sr == static_cast<double>(r.successes) / 777.0);
}

TEST_CASE("classifier: probabilities, degenerate data, identical images and accuracy") {
    ClassifierConfig cfg;
    cfg.schedule.epochs = 8;
    cfg.schedule.seed = 1;
    Rng rng(6);
    Classifier clf(cfg, rng);
    const auto p = clf.probabilities(rng.uniform_tensor({32 * 32, 3}, 0, 1));
    double sum = 0;
    for (double v : p) {
        CHECK(v >= 0.0);
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);

    std::vector<Tensor> one_class{render_scene(0, 32, 1), render_scene(0, 32, 2)};
    CHECK_THROWS_AS(train_toy_classifier(clf, one_class, {0, 0}, cfg), ContractError);
    ClassifierConfig bad = cfg;
    bad.n_classes = 1;
    CHECK_THROWS_AS(Classifier(bad, rng), ConfigError);

    std::vector<Tensor> train, test;
    std::vector<std::size_t> ytrain, ytest;
    for (std::size_t c = 0; c < 10; ++c) {
        for (std::size_t i = 0; i < 24; ++i) {
            train.push_back(render_scene(c, 32, 1000 * c + i));
            ytrain.push_back(c);
        }
        for (std::size_t i = 0; i < 10; ++i) {
            test.push_back(render_scene(c, 32, 900000 + 1000 * c + i));
            ytest.push_back(c);
        }
    }
    train_toy_classifier(clf, train, ytrain, cfg);
    const double acc = classifier_accuracy(clf, test, ytest);
    CHECK(acc >= 0.9);

    for (std::size_t n : {2u, 10u})
        for (std::size_t k = 1; k <= n; k += 3) {
            const EvalReport rep = nway_topk(test[5], test[5], clf, n, k, 200, 9);
            CHECK(rep.success_rate == 1.0);
        }
}

TEST_CASE("evaluate_pairs is reproducible and writes its report") {
    ClassifierConfig cfg;
    Rng rng(7);
    Classifier clf(cfg, rng);
    std::vector<Tensor> gen, gt;
    for (int i = 0; i < 4; ++i) {
        gen.push_back(rng.uniform_tensor({32 * 32, 3}, 0, 1));
        gt.push_back(rng.uniform_tensor({32 * 32, 3}, 0, 1));
    }
    const EvalReport a = evaluate_pairs(gen, gt, clf, 10, 1, 100, 5);
    const EvalReport b = evaluate_pairs(gen, gt, clf, 10, 1, 100, 5);
    CHECK(a.to_json().dump() == b.to_json().dump());
    CHECK(a.total_trials == 400);
    CHECK(a.success_rate == static_cast<double>(a.successes) / 400.0);
    const auto j = a.to_json();
    for (const char* key : {"n", "k", "trials", "seed", "mean_sr", "per_image"}) CHECK(j.contains(key));

    const auto dir = std::filesystem::temp_directory_path() / "neurodec_test_eval";
    std::filesystem::create_directories(dir);
    a.write(dir / "r.json", dir / "r.csv");
    CHECK(std::filesystem::file_size(dir / "r.json") > 0);
    CHECK(std::filesystem::file_size(dir / "r.csv") > 0);
    std::filesystem::remove_all(dir);
}
