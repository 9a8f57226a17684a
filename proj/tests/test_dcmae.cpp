#include <doctest.h>

#include <cmath>
#include <vector>

#include "neurodec/dcmae.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/gradcheck.hpp"
#include "neurodec/optim.hpp"
#include "neurodec/rng.hpp"
#include "oracles.hpp"

using namespace neurodec;

namespace {

MaeConfig tiny_mae() { return MaeConfig{4, 8, 8, 2, 2, 8, 2, 1, 2.0}; }

Phase1Config tiny_cfg() {
    Phase1Config cfg;
    cfg.mae = tiny_mae();
    cfg.patch = 8;
    cfg.mask_ratio = 0.5;
    return cfg;
}

std::vector<Tensor> voxel_rows(std::size_t n, std::size_t width, Rng& rng) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(rng.normal_tensor({1, width}));
    return out;
}

}  // namespace

TEST_CASE("contrastive losses match the termwise oracle") {
    Rng rng(1);
    for (std::size_t n = 1; n <= 4; ++n)
        for (std::size_t d : {1u, 3u, 8u})
            for (double tau : {0.1, 0.5, 1.0}) {
                const Tensor a = rng.normal_tensor({n, d}, 0.7);
                const Tensor b = rng.normal_tensor({n, d}, 0.7);
                const double cross = loss_cross_contrastive(Var(a), Var(b), tau).item();
                const double self = loss_self_contrastive(Var(a), Var(b), tau).item();
                CHECK(std::abs(cross - oracle::cross_contrastive(oracle::to_mat(a), oracle::to_mat(b), tau)) <= 1e-10);
                CHECK(std::abs(self - oracle::self_contrastive(oracle::to_mat(a), oracle::to_mat(b), tau)) <= 1e-10);
            }
}

TEST_CASE("batch of one gives exactly zero") {
    Rng rng(2);
    for (double tau : {0.1, 0.5, 1.0}) {
        const Tensor a = rng.normal_tensor({1, 8}, 5.0);
        const Tensor b = rng.normal_tensor({1, 8}, 5.0);
        CHECK(loss_cross_contrastive(Var(a), Var(b), tau).item() == 0.0);
        CHECK(loss_self_contrastive(Var(a), Var(b), tau).item() == 0.0);
    }
}

TEST_CASE("equal similarities give log 2 at batch size two") {
    const Tensor a = Tensor::matrix({{1.0, 0.0}, {1.0, 0.0}});
    CHECK(loss_cross_contrastive(Var(a), Var(a), 0.5).item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("self contrastive tends to zero as tau shrinks for orthogonal perfect reconstructions") {
    const Tensor d = Tensor::matrix({{3.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {0.0, 0.0, 3.0}});
    double prev = 1e300;
    for (double tau : {1.0, 0.1, 0.01}) {
        const double l = loss_self_contrastive(Var(d), Var(d), tau).item();
        CHECK(std::abs(l - oracle::self_contrastive(oracle::to_mat(d), oracle::to_mat(d), tau)) <= 1e-10);
        CHECK(l <= prev);
        prev = l;
    }
    CHECK(prev < 1e-30);
    CHECK(loss_self_contrastive(Var(d), Var(d), 1.0).item() > 1e-4);
}

TEST_CASE("contrastive losses are invariant to a consistent batch permutation") {
    Rng rng(3);
    const Tensor a = rng.normal_tensor({4, 6});
    const Tensor b = rng.normal_tensor({4, 6});
    const auto perm = rng.permutation(4);
    const Var pa = gather_rows(Var(a), perm), pb = gather_rows(Var(b), perm);
    CHECK(loss_cross_contrastive(pa, pb, 0.5).item() ==
          doctest::Approx(loss_cross_contrastive(Var(a), Var(b), 0.5).item()).epsilon(1e-13));
    CHECK(loss_self_contrastive(pa, pb, 0.5).item() ==
          doctest::Approx(loss_self_contrastive(Var(a), Var(b), 0.5).item()).epsilon(1e-13));
}

TEST_CASE("contrastive loss is nonnegative when the positive dominates") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = rng.normal_tensor({3, 4});
        CHECK(loss_self_contrastive(Var(a), Var(a), 1.0).item() >= 0.0);
    }
}

TEST_CASE("contrastive loss rejects bad tau and shapes") {
    Rng rng(5);
    const Var a(rng.normal_tensor({2, 3}));
    CHECK_THROWS_AS(loss_cross_contrastive(a, a, 0.0), ContractError);
    CHECK_THROWS_AS(loss_cross_contrastive(a, Var(rng.normal_tensor({3, 3})), 0.5), ShapeError);
}

TEST_CASE("forward_twice: shapes, reproducibility and mask-free equality") {
    Rng init(6);
    FmriMae model(tiny_mae(), 30, 8, init);
    const auto batch = voxel_rows(3, 30, init);
    Rng r1(9), r2(9);
    auto [a1, a2] = forward_twice(model, batch, 0.5, r1);
    auto [b1, b2] = forward_twice(model, batch, 0.5, r2);
    CHECK(a1.shape() == Shape{3, 30});
    CHECK(a1.value() == b1.value());
    CHECK(a2.value() == b2.value());
    auto [z1, z2] = forward_twice(model, batch, 0.0, r1);
    CHECK(z1.value() == z2.value());
    CHECK_THROWS_AS(forward_twice(model, {}, 0.5, r1), ContractError);
}

TEST_CASE("phase-1 total is the weighted sum and gamma_c zero drops the cross gradient") {
    Rng init(7);
    FmriMae model(tiny_mae(), 32, 8, init);
    const auto batch = voxel_rows(3, 32, init);
    Phase1Config cfg = tiny_cfg();
    cfg.gamma_c = 0.5;
    cfg.gamma_s = 1.0;
    Rng r(1);
    const auto l = phase1_loss(model, batch, batch, cfg, r);
    CHECK(l.total.item() == doctest::Approx(0.5 * l.l_c.item() + l.l_s.item()).epsilon(1e-14));

    const ParamSet ps = model.mae.params();
    cfg.gamma_c = 0.0;
    cfg.gamma_s = 2.0;
    ps.zero_grad();
    Rng ra(3);
    backward(phase1_loss(model, batch, batch, cfg, ra).total);
    std::vector<Tensor> g_total;
    for (const auto& p : ps.items()) g_total.push_back(p.var.grad());
    ps.zero_grad();
    Rng rb(3);
    backward(scale(phase1_loss(model, batch, batch, cfg, rb).l_s, 2.0));
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(oracle::max_abs_diff(g_total[i], ps.items()[i].var.grad()) <= 1e-12);
}

TEST_CASE("phase-1 composite loss passes gradient check") {
    Rng init(8);
    FmriMae model(tiny_mae(), 32, 8, init);
    const auto batch = voxel_rows(3, 32, init);
    Phase1Config cfg = tiny_cfg();
    cfg.tau = 0.5;
    GradCheckOptions opts;
    opts.max_coords = 6;
    const auto rep = grad_check(
        [&] {
            Rng r(11);
            return phase1_loss(model, batch, batch, cfg, r).total;
        },
        model.mae.params(), opts);
    INFO(rep.diagnostic);
    CHECK(rep.passed);
}

TEST_CASE("phase-1 config validation") {
    Phase1Config cfg = tiny_cfg();
    CHECK_NOTHROW(cfg.validate());
    cfg.tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.mae.depth_dec = cfg.mae.depth_enc;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_cfg();
    cfg.mask_ratio = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("phase-1 training on eight samples halves the loss") {
    Rng init(12);
    FmriMae model(tiny_mae(), 32, 8, init);
    const auto data = voxel_rows(8, 32, init);
    Phase1Config cfg = tiny_cfg();
    cfg.batch = 8;
    cfg.epochs = 150;
    cfg.lr = 3e-3;
    cfg.seed = 1;
    const TrainLog log = train_phase1(model, data, cfg);
    REQUIRE(log.rows.size() == 150);
    const double first = log.rows.front()[3];
    const double last = log.rows.back()[3];
    CHECK(last <= 0.5 * first);
}
