#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "neurodec/autograd.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/gradcheck.hpp"
#include "neurodec/nn.hpp"
#include "neurodec/rng.hpp"
#include "oracles.hpp"

using namespace neurodec;

namespace {

oracle::Vec to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

nn::CrossAttentionParams random_params(std::size_t qw, std::size_t kvw, std::size_t dk, Rng& rng) {
    auto p = nn::CrossAttentionParams::init(qw, kvw, dk, rng);
    for (Var* b : {&p.b_q, &p.b_k, &p.b_v}) b->mutable_value() = rng.normal_tensor(b->shape(), 0.3);
    return p;
}

oracle::Mat oracle_ca(const Tensor& qs, const Tensor& kvs, const nn::CrossAttentionParams& p) {
    const auto q = oracle::affine(oracle::to_mat(qs), oracle::to_mat(p.w_q.value()), to_vec(p.b_q.value()));
    const auto k = oracle::affine(oracle::to_mat(kvs), oracle::to_mat(p.w_k.value()), to_vec(p.b_k.value()));
    const auto v = oracle::affine(oracle::to_mat(kvs), oracle::to_mat(p.w_v.value()), to_vec(p.b_v.value()));
    return oracle::attention(q, k, v);
}

// Values set to the identity so the output rows are the attention weights.
Tensor attention_weights(const Tensor& qs, std::size_t n_keys, Rng& rng) {
    auto p = nn::CrossAttentionParams::init(qs.cols(), n_keys, n_keys, rng, 3.0);
    p.w_v.mutable_value() = Tensor::eye(n_keys);
    p.b_v.mutable_value().fill(0.0);
    return nn::cross_attention(Var(qs), Var(Tensor::eye(n_keys)), p).value();
}

}  // namespace

TEST_CASE("cross attention matches the termwise oracle on random 3x4 instances") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const Tensor qs = rng.normal_tensor({3, 5});
        const Tensor kvs = rng.normal_tensor({4, 6});
        const auto p = random_params(5, 6, 4, rng);
        const Tensor out = nn::cross_attention(Var(qs), Var(kvs), p).value();
        const auto ref = oracle_ca(qs, kvs, p);
        REQUIRE(out.rows() == 3);
        REQUIRE(out.cols() == 4);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(out.at(i, c) - ref[i][c]) <= 1e-10);
    }
}

TEST_CASE("attention weights are row stochastic") {
    Rng rng(11);
    const Tensor w = attention_weights(rng.normal_tensor({7, 3}), 5, rng);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
            CHECK(w.at(i, j) >= 0.0);
            s += w.at(i, j);
        }
        CHECK(std::abs(s - 1.0) <= 1e-9);
    }
}

TEST_CASE("single key returns the value row at every query") {
    Rng rng(4);
    const auto p = random_params(3, 2, 4, rng);
    const Tensor kv = rng.normal_tensor({1, 2});
    const Tensor out = nn::cross_attention(Var(rng.normal_tensor({5, 3})), Var(kv), p).value();
    const auto ref = oracle::affine(oracle::to_mat(kv), oracle::to_mat(p.w_v.value()), to_vec(p.b_v.value()));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(i, c) == doctest::Approx(ref[0][c]).epsilon(1e-14));
    // exact: the library's own value projection, repeated
    const Tensor vrow = add_row(matmul(Var(kv), p.w_v), p.b_v).value();
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 4; ++c) CHECK(out.at(i, c) == vrow.at(0, c));
}

TEST_CASE("identical keys give uniform weights and the mean value row") {
    Rng rng(8);
    const Tensor krow = rng.normal_tensor({1, 3});
    Tensor k({4, 3});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 3; ++c) k.at(i, c) = krow.at(0, c);
    const Tensor v = rng.normal_tensor({4, 2});
    const Tensor out = nn::attention(Var(rng.normal_tensor({2, 3})), Var(k), Var(v)).value();
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 2; ++c) {
            const double mean = (v.at(0, c) + v.at(1, c) + v.at(2, c) + v.at(3, c)) / 4.0;
            CHECK(std::abs(out.at(i, c) - mean) <= 1e-12);
        }
}

TEST_CASE("cross attention is query equivariant and key/value permutation invariant") {
    Rng rng(21);
    const Tensor qs = rng.normal_tensor({4, 3});
    const Tensor kvs = rng.normal_tensor({5, 3});
    const auto p = random_params(3, 3, 4, rng);
    const Tensor base = nn::cross_attention(Var(qs), Var(kvs), p).value();
    const auto qperm = rng.permutation(4);
    const auto kperm = rng.permutation(5);
    const Tensor out = nn::cross_attention(gather_rows(Var(qs), qperm), gather_rows(Var(kvs), kperm), p).value();
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(out.at(i, c) - base.at(qperm[i], c)) <= 1e-12);
}

TEST_CASE("cross attention rejects empty key side and width mismatch") {
    Rng rng(2);
    const auto p = random_params(3, 2, 4, rng);
    CHECK_THROWS_AS(nn::cross_attention(Var(rng.normal_tensor({2, 3})), Var(Tensor({0, 2})), p), ContractError);
    CHECK_THROWS_AS(nn::cross_attention(Var(rng.normal_tensor({2, 4})), Var(rng.normal_tensor({2, 2})), p),
                    ShapeError);
}

TEST_CASE("attention logits are scaled by exactly one over sqrt d_k") {
    Rng rng(5);
    const Tensor q = rng.normal_tensor({3, 4});
    const Tensor k = rng.normal_tensor({2, 4});
    const Tensor v = rng.normal_tensor({2, 3});
    const Tensor base = nn::attention(Var(q), Var(k), Var(v)).value();
    // scaling uses exactly 1/sqrt(d_k): concatenating q and k with themselves
    // doubles both the dot products and d_k, so logits grow by sqrt(2)
    const Var qq[] = {Var(q), Var(q)};
    const Var kk[] = {Var(k), Var(k)};
    const Tensor dbl = nn::attention(concat_cols(qq), concat_cols(kk), Var(v)).value();
    const auto ref = oracle::attention(oracle::to_mat(q), oracle::to_mat(k), oracle::to_mat(v));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(base.at(i, c) - ref[i][c]) <= 1e-12);
    auto qs = oracle::to_mat(q);
    for (auto& r : qs)
        for (auto& x : r) x *= std::sqrt(2.0);
    const auto ref2 = oracle::attention(qs, oracle::to_mat(k), oracle::to_mat(v));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(dbl.at(i, c) - ref2[i][c]) <= 1e-12);
}

TEST_CASE("transformer block preserves shape and is permutation equivariant") {
    Rng rng(3);
    nn::TransformerBlock block(8, 2, 2.0, rng);
    for (std::size_t n : {1u, 3u, 6u}) {
        const Tensor x = rng.normal_tensor({n, 8});
        CHECK(block(Var(x)).shape() == x.shape());
    }
    const Tensor x = rng.normal_tensor({5, 8});
    const auto perm = rng.permutation(5);
    const Tensor a = block(Var(x)).value();
    const Tensor b = block(gather_rows(Var(x), perm)).value();
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(b.at(i, c) - a.at(perm[i], c)) <= 1e-12);
}

TEST_CASE("two-layer transformer stack passes gradient check") {
    Rng rng(9);
    nn::TransformerStack stack({2, 8, 2, 2.0, 4}, rng);
    Var x(rng.normal_tensor({3, 8}), true);
    const Tensor w = rng.normal_tensor({3, 8});
    ParamSet ps;
    stack.collect(ps, "stack.");
    ps.add("x", x);
    GradCheckOptions opts;
    opts.max_coords = 1000;
    const auto rep = grad_check([&] { return sum(mul(stack(x), Var(w))); }, ps, opts);
    INFO(rep.diagnostic);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error <= 1e-4);
}

TEST_CASE("cross attention modules pass gradient check") {
    Rng rng(10);
    nn::CrossAttention ca(6, 4, 8, 2, rng);
    Var q(rng.normal_tensor({3, 6}), true);
    Var kv(rng.normal_tensor({2, 4}), true);
    const Tensor w = rng.normal_tensor({3, 6});
    ParamSet ps;
    ca.collect(ps, "ca.");
    ps.add("q", q);
    ps.add("kv", kv);
    GradCheckOptions opts;
    opts.max_coords = 1000;
    const auto rep = grad_check([&] { return sum(mul(ca(q, kv), Var(w))); }, ps, opts);
    INFO(rep.diagnostic);
    CHECK(rep.passed);
}

TEST_CASE("fmri patch embedding: token count, zero input and linearity") {
    Rng rng(1);
    const auto fp = nn::patchify_fmri(rng.normal_tensor({1, 1024}), 16);
    CHECK(fp.patches.rows() == 64);
    CHECK(fp.padding == 0);
    const auto padded = nn::patchify_fmri(rng.normal_tensor({1, 1000}), 16);
    CHECK(padded.patches.rows() == 63);
    CHECK(padded.padding == 8);
    CHECK_THROWS_AS(nn::patchify_fmri(Tensor({1, 0}), 16), ContractError);

    nn::PatchEmbed pe(16, 64, 8, rng);
    const Tensor zero_tokens = pe(Var(nn::patchify_fmri(Tensor({1, 1024}), 16).patches)).value();
    CHECK(zero_tokens == pe.pos.value());

    const Tensor v = rng.normal_tensor({1, 1024});
    Tensor v2 = v;
    for (auto& x : v2.values()) x *= 2.0;
    const Tensor a = pe.project(Var(nn::patchify_fmri(v, 16).patches)).value();
    const Tensor b = pe.project(Var(nn::patchify_fmri(v2, 16).patches)).value();
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(b[i] == doctest::Approx(2.0 * a[i]).epsilon(1e-13));
}

TEST_CASE("time embedding: closed form at zero, distinct and deterministic") {
    const Tensor e0 = nn::sinusoidal_embedding(0.0, 16);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(e0[i] == 0.0);
        CHECK(e0[8 + i] == 1.0);
    }
    std::set<std::vector<double>> seen;
    for (std::size_t t = 0; t <= 1000; ++t) {
        const Tensor e = nn::sinusoidal_embedding(static_cast<double>(t), 32);
        seen.insert(to_vec(e));
    }
    CHECK(seen.size() == 1001);

    Rng rng(6);
    nn::TimeEmbedding te(16, 8, 1000, rng);
    CHECK(te(500).value() == te(500).value());
    CHECK_FALSE(te(500).value() == te(501).value());
    CHECK_THROWS_AS(te(1001), ContractError);
}

TEST_CASE("conv2d matches a direct convolution oracle") {
    for (std::size_t stride : {1u, 2u}) {
        Rng rng(30 + stride);
        const std::size_t h = 5, w = 6, cin = 3, cout = 4, k = 3, pad = 1;
        nn::Conv2d conv(cin, cout, k, stride, pad, rng);
        conv.bias.mutable_value() = rng.normal_tensor(conv.bias.shape());
        const Tensor x = rng.normal_tensor({h * w, cin});
        const Tensor y = conv(Var(x), h, w).value();
        const std::size_t ho = conv.out_size(h), wo = conv.out_size(w);
        REQUIRE(y.rows() == ho * wo);
        const Tensor& W = conv.weight.value();
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox)
                for (std::size_t co = 0; co < cout; ++co) {
                    long double s = conv.bias.value()[co];
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                            for (std::size_t ci = 0; ci < cin; ++ci)
                                s += static_cast<long double>(x.at(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix), ci)) *
                                     W.at((ky * k + kx) * cin + ci, co);
                        }
                    CHECK(std::abs(y.at(oy * wo + ox, co) - static_cast<double>(s)) <= 1e-12);
                }
    }
}

TEST_CASE("transformer config validation") {
    CHECK_THROWS(nn::TransformerConfig{1, 10, 3, 2.0, 4}.validate());
    CHECK_THROWS(nn::TransformerConfig{0, 8, 2, 2.0, 4}.validate());
    CHECK_NOTHROW(nn::TransformerConfig{2, 8, 2, 2.0, 4}.validate());
}
