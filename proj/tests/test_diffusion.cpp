#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "neurodec/diffusion.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/gradcheck.hpp"
#include "neurodec/latent_ae.hpp"
#include "neurodec/optim.hpp"
#include "oracles.hpp"

using namespace neurodec;

namespace {

DenoiserConfig tiny_denoiser(std::size_t T = 50) {
    DenoiserConfig dc;
    dc.latent_size = 4;
    dc.latent_channels = 2;
    dc.channels = 4;
    dc.time_dim = 8;
    dc.sin_dim = 8;
    dc.cond_width = 8;
    dc.ca_heads = 2;
    dc.T = T;
    return dc;
}

}  // namespace

TEST_CASE("linear schedule invariants") {
    const auto s = NoiseSchedule::linear(1000, 1e-4, 0.02);
    CHECK_NOTHROW(s.validate());
    CHECK(s.beta.front() == doctest::Approx(1e-4));
    CHECK(s.beta.back() == doctest::Approx(0.02));
    CHECK(s.alpha_bar.front() > 0.999);
    CHECK(s.alpha_bar.back() < 1e-4);
    double prod = 1.0;
    for (std::size_t t = 0; t < 1000; ++t) {
        CHECK(s.alpha[t] == 1.0 - s.beta[t]);
        prod *= s.alpha[t];
        CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
    }
}

TEST_CASE("q_sample closed form, limits and errors") {
    const auto s = NoiseSchedule::linear(1000);
    Rng rng(1);
    const Tensor z0 = rng.normal_tensor({16, 4});
    const Tensor eps = rng.normal_tensor({16, 4});
    const Tensor a = q_sample(z0, 0, eps, s);
    CHECK(oracle::max_abs_diff(a, z0) < 0.05);
    const Tensor b = q_sample(z0, 999, eps, s);
    CHECK(oracle::max_abs_diff(b, eps) < 0.05);
    const Tensor c = q_sample(z0, 300, eps, s);
    for (std::size_t i = 0; i < c.numel(); ++i)
        CHECK(c[i] == doctest::Approx(std::sqrt(s.alpha_bar[300]) * z0[i] + std::sqrt(1 - s.alpha_bar[300]) * eps[i]));
    CHECK_THROWS_AS(q_sample(z0, 1000, eps, s), ContractError);
    CHECK_THROWS_AS(q_sample(z0, 10, rng.normal_tensor({4, 4}), s), ShapeError);
}

TEST_CASE("q_sample marginal statistics within three standard errors") {
    const auto s = NoiseSchedule::linear(1000);
    Rng rng(1);
    const double z0 = 0.8;
    const std::size_t n = 10000;
    for (std::size_t t : {100u, 500u, 900u}) {
        double sum = 0, sq = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double x = q_sample(Tensor::scalar(z0), t, Tensor::scalar(rng.normal()), s).item();
            sum += x;
            sq += x * x;
        }
        const double mean = sum / n;
        const double sd = std::sqrt(sq / n - mean * mean);
        const double sigma = std::sqrt(1 - s.alpha_bar[t]);
        CHECK(std::abs(mean - std::sqrt(s.alpha_bar[t]) * z0) < 3 * sigma / std::sqrt(double(n)));
        CHECK(std::abs(sd - sigma) < 3 * sigma / std::sqrt(2.0 * n));
    }
}

TEST_CASE("denoiser output shape and cond width check") {
    Rng rng(3);
    CondDenoiser model(tiny_denoiser(), rng);
    const Var z(rng.normal_tensor({16, 2}));
    CHECK(model(z, 7, Var(rng.normal_tensor({3, 8}))).shape() == z.shape());
    CHECK_THROWS_AS(model(z, 7, Var(rng.normal_tensor({3, 5}))), ShapeError);
    CHECK_THROWS_AS(model(Var(rng.normal_tensor({9, 2})), 7, Var(rng.normal_tensor({3, 8}))), ShapeError);
}

TEST_CASE("parameter groups partition the denoiser") {
    Rng rng(4);
    CondDenoiser model(tiny_denoiser(), rng);
    const ParamSet all = model.params();
    const ParamSet cond = model.conditioning_params();
    const ParamSet bb = model.backbone_params();
    CHECK(cond.size() + bb.size() == all.size());
    CHECK(cond.size() > 0);
    for (const auto& p : cond.items()) CHECK((p.name.rfind("ca.", 0) == 0 || p.name.rfind("cond.", 0) == 0));
}

TEST_CASE("zeroing both conditioning paths makes the output independent of cond") {
    Rng rng(5);
    CondDenoiser model(tiny_denoiser(), rng);
    const Var z(rng.normal_tensor({16, 2}));
    const Var c1(rng.normal_tensor({3, 8})), c2(rng.normal_tensor({5, 8}, 4.0));
    CHECK_FALSE(model(z, 10, c1).value() == model(z, 10, c2).value());
    const ParamSet cond = model.conditioning_params();
    for (const auto& p : cond.items()) {
        Var v = p.var;
        v.mutable_value().fill(0.0);
    }
    CHECK(model(z, 10, c1).value() == model(z, 10, c2).value());
}

TEST_CASE("denoising loss gradient check on a 4x4 latent") {
    Rng rng(6);
    CondDenoiser model(tiny_denoiser(), rng);
    const auto s = NoiseSchedule::linear(50, 1e-3, 0.2);
    const Tensor z0 = rng.normal_tensor({16, 2});
    const Tensor eps = rng.normal_tensor({16, 2});
    Var cond(rng.normal_tensor({3, 8}), true);
    ParamSet ps = model.params();
    ps.add("cond_tokens", cond);
    GradCheckOptions opts;
    opts.max_coords = 4;
    const auto rep = grad_check([&] { return denoise_loss(model, z0, 25, eps, cond, s); }, ps, opts);
    INFO(rep.diagnostic);
    CHECK(rep.passed);
}

TEST_CASE("flattened time-path conditioning: token count, position sensitivity and gradients") {
    Rng rng(16);
    DenoiserConfig dc = tiny_denoiser();
    dc.cond_tokens = 3;
    CondDenoiser model(dc, rng);
    CHECK(model.cond_proj.weight.value().rows() == 24);
    const Var z(rng.normal_tensor({16, 2}));
    CHECK_THROWS_AS(model(z, 7, Var(rng.normal_tensor({4, 8}))), ShapeError);

    // swapping two tokens leaves the token mean unchanged but not the output
    const Tensor c = rng.normal_tensor({3, 8});
    Tensor swapped = c;
    for (std::size_t j = 0; j < 8; ++j) std::swap(swapped.at(0, j), swapped.at(2, j));
    CondDenoiser pooled(tiny_denoiser(), rng);
    for (auto* m : {&model, &pooled})
        for (const auto& p : m->params().with_prefix("ca.").items()) {
            Var v = p.var;
            v.mutable_value().fill(0.0);
        }
    CHECK(oracle::max_abs_diff(pooled(z, 7, Var(c)).value(), pooled(z, 7, Var(swapped)).value()) < 1e-12);
    CHECK(oracle::max_abs_diff(model(z, 7, Var(c)).value(), model(z, 7, Var(swapped)).value()) > 1e-6);

    CondDenoiser fresh(dc, rng);
    const auto s = NoiseSchedule::linear(50, 1e-3, 0.2);
    const Tensor z0 = rng.normal_tensor({16, 2});
    const Tensor eps = rng.normal_tensor({16, 2});
    Var cond(rng.normal_tensor({3, 8}), true);
    ParamSet ps = fresh.conditioning_params();
    ps.add("cond_tokens", cond);
    GradCheckOptions opts;
    opts.max_coords = 6;
    const auto rep = grad_check([&] { return denoise_loss(fresh, z0, 25, eps, cond, s); }, ps, opts);
    INFO(rep.diagnostic);
    CHECK(rep.passed);
}

TEST_CASE("initial denoising loss is close to one for unit-variance latents") {
    Rng rng(7);
    CondDenoiser model(tiny_denoiser(1000), rng);
    const auto s = NoiseSchedule::linear(1000);
    double total = 0;
    const int draws = 200;
    for (int i = 0; i < draws; ++i) {
        NoGradGuard ng;
        total += denoise_loss(model, rng.normal_tensor({16, 2}), rng.index(1000), rng.normal_tensor({16, 2}),
                              Var(rng.normal_tensor({3, 8})), s)
                     .item();
    }
    CHECK(total / draws == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("fine-tuning leaves everything outside the trainable set bit-identical") {
    Rng rng(8);
    CondDenoiser model(tiny_denoiser(), rng);
    const auto s = NoiseSchedule::linear(50, 1e-3, 0.2);
    std::vector<Tensor> latents;
    std::vector<Tensor> conds;
    for (int i = 0; i < 4; ++i) {
        latents.push_back(rng.normal_tensor({16, 2}));
        conds.push_back(rng.normal_tensor({3, 8}));
    }
    const ParamSet bb = model.backbone_params();
    const ParamSet cond = model.conditioning_params();
    const auto before = bb.snapshot();
    const auto cond_before = cond.snapshot();
    DiffusionTrainConfig cfg;
    cfg.schedule = Schedule{100, 4, 0, 1e-2, 1e-4, 0.0, 1};
    const TrainLog log = finetune_ldm(model, cond, latents, [&](std::size_t i) { return Var(conds[i]); }, s, cfg);
    CHECK(log.rows.size() == 100);
    const auto after = bb.snapshot();
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
    const auto cond_after = cond.snapshot();
    std::size_t changed = 0;
    for (std::size_t i = 0; i < cond_before.size(); ++i) changed += !(cond_before[i] == cond_after[i]);
    CHECK(changed == cond_before.size());
    CHECK(bb.items().front().var.requires_grad());
}

TEST_CASE("sampling timesteps are descending and bounded") {
    const auto ts = sampling_timesteps(1000, 50);
    CHECK(ts.size() == 50);
    CHECK(ts.front() == 980);
    CHECK(ts.back() == 0);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
    CHECK(sampling_timesteps(1000, 1000).front() == 999);
    CHECK_THROWS_AS(sampling_timesteps(1000, 1001), ContractError);
    CHECK_THROWS_AS(sampling_timesteps(1000, 0), ContractError);
}

TEST_CASE("one-step samplers invert q_sample given the true noise") {
    const auto s = NoiseSchedule::linear(10, 0.05, 0.3);
    Rng rng(9);
    const Tensor z0 = rng.normal_tensor({8, 2});
    const Tensor eps = rng.normal_tensor({8, 2});
    const std::size_t t = sampling_timesteps(s.T, 1).front();
    const Tensor zt = q_sample(z0, t, eps, s);
    const EpsFn oracle_eps = [&](const Tensor&, std::size_t) { return eps; };
    Rng r(1);
    CHECK(oracle::max_abs_diff(ddpm_sample(oracle_eps, s, 1, zt, r), z0) <= 1e-12);
    CHECK(oracle::max_abs_diff(plms_sample(oracle_eps, s, 1, zt), z0) <= 1e-12);
}

TEST_CASE("multi-step samplers recover z0 from an exact noise oracle") {
    // eps_hat(z, t) = (z - sqrt(abar) z0) / sqrt(1 - abar) is exact on the
    // deterministic path, so every step lands on the same z0.
    const auto s = NoiseSchedule::linear(100);
    Rng rng(10);
    const Tensor z0 = rng.normal_tensor({8, 2});
    const EpsFn oracle_eps = [&](const Tensor& z, std::size_t t) {
        Tensor e(z.shape());
        for (std::size_t i = 0; i < z.numel(); ++i)
            e[i] = (z[i] - std::sqrt(s.alpha_bar[t]) * z0[i]) / std::sqrt(1 - s.alpha_bar[t]);
        return e;
    };
    const Tensor zT = rng.normal_tensor({8, 2});
    CHECK(oracle::max_abs_diff(plms_sample(oracle_eps, s, 20, zT), z0) <= 1e-9);
    Rng r(2);
    CHECK(oracle::max_abs_diff(ddpm_sample(oracle_eps, s, 20, zT, r), z0) <= 1e-9);
}

TEST_CASE("samplers are deterministic for fixed seeds") {
    Rng rng(11);
    CondDenoiser model(tiny_denoiser(), rng);
    const auto s = NoiseSchedule::linear(50, 1e-3, 0.2);
    const Tensor cond = rng.normal_tensor({3, 8});
    const Tensor zT = rng.normal_tensor({16, 2});
    const EpsFn f = make_eps_fn(model, cond);
    CHECK(plms_sample(f, s, 10, zT) == plms_sample(f, s, 10, zT));
    Rng a(5), b(5);
    CHECK(ddpm_sample(f, s, 10, zT, a) == ddpm_sample(f, s, 10, zT, b));
    CHECK_THROWS_AS(plms_sample(f, s, 51, zT), ContractError);
}

TEST_CASE("conditioning gap returns matched and shuffled losses") {
    Rng rng(12);
    CondDenoiser model(tiny_denoiser(), rng);
    const auto s = NoiseSchedule::linear(50, 1e-3, 0.2);
    std::vector<Tensor> latents, conds;
    for (int i = 0; i < 3; ++i) {
        latents.push_back(rng.normal_tensor({16, 2}));
        conds.push_back(rng.normal_tensor({3, 8}));
    }
    const auto [m1, s1] = conditioning_gap(model, latents, conds, s, 2, 4);
    const auto [m2, s2] = conditioning_gap(model, latents, conds, s, 2, 4);
    CHECK(m1 == m2);
    CHECK(s1 == s2);
    CHECK(m1 > 0.0);
    CHECK(m1 != s1);
}

TEST_CASE("latent auto-encoder shapes and training") {
    LatentAeConfig cfg;
    cfg.image_size = 8;
    cfg.channels = 4;
    cfg.latent_channels = 2;
    cfg.schedule = Schedule{30, 4, 0, 5e-3, 1e-4, 0.0, 1};
    Rng rng(13);
    LatentAE ae(cfg, rng);
    std::vector<Tensor> images;
    for (int i = 0; i < 4; ++i) images.push_back(rng.uniform_tensor({64, 3}, 0, 1));
    CHECK(ae.encode(images[0]).shape() == Shape{4, 2});
    CHECK(ae.decode(ae.encode(images[0])).shape() == Shape{64, 3});
    const TrainLog log = train_latent_ae(ae, images, cfg);
    const auto mse = log.column("mse");
    CHECK(mse.back() < mse.front());
    // unit-variance latent space
    double sq = 0;
    std::size_t n = 0;
    for (const auto& img : images) {
        const Tensor z = ae.encode(img);
        for (double v : z.values()) sq += v * v;
        n += z.numel();
    }
    CHECK(std::sqrt(sq / n) == doctest::Approx(1.0).epsilon(1e-9));
}
