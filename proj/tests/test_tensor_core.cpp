#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <cstring>
#include <set>
#include <string>

#include "neurodec/autograd.hpp"
#include "neurodec/checkpoint.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/gradcheck.hpp"
#include "neurodec/kernels.hpp"
#include "neurodec/nn.hpp"
#include "neurodec/optim.hpp"
#include "neurodec/rng.hpp"
#include "oracles.hpp"

using namespace neurodec;
namespace fs = std::filesystem;

namespace {

// Autodiff gradient of sum(weights * op(x)) with respect to x, plus the
// finite-difference estimate of the same quantity.
struct GradPair {
    Tensor autodiff;
    Tensor numeric;
};

GradPair grads_of(const std::function<Var(const Var&)>& op, const Tensor& x0, std::uint64_t seed) {
    Rng rng(seed);
    Var probe(x0, true);
    Tensor weights = rng.normal_tensor(op(Var(x0)).shape());
    Var out = op(probe);
    backward(sum(mul(out, Var(weights))));
    auto f = [&](const Tensor& x) {
        NoGradGuard ng;
        return sum(mul(op(Var(x)), Var(weights))).item();
    };
    return {probe.grad(), oracle::fd_gradient(f, x0)};
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("neurodec_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("matmul matches hand-computed and identity products") {
    Var a(Tensor::matrix({{1, 2}, {3, 4}}));
    Var b(Tensor::matrix({{5, 6}, {7, 8}}));
    CHECK(matmul(a, b).value() == Tensor::matrix({{19, 22}, {43, 50}}));

    Rng rng(3);
    Var r(rng.normal_tensor({4, 6}));
    CHECK(matmul(r, Var(Tensor::eye(6))).value() == r.value());
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Var a(Tensor({2, 3}));
    Var b(Tensor({4, 5}));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x5]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum matches finite differences (linear tolerance)") {
    Rng rng(11);
    Tensor a0 = rng.normal_tensor({5, 7});
    Tensor b0 = rng.normal_tensor({7, 3});
    Var a(a0, true), b(b0, true);
    backward(sum(matmul(a, b)));
    auto fa = [&](const Tensor& x) { NoGradGuard ng; return sum(matmul(Var(x), Var(b0))).item(); };
    auto fb = [&](const Tensor& x) { NoGradGuard ng; return sum(matmul(Var(a0), Var(x))).item(); };
    CHECK(oracle::max_rel_error(a.grad(), oracle::fd_gradient(fa, a0)) < 1e-6);
    CHECK(oracle::max_rel_error(b.grad(), oracle::fd_gradient(fb, b0)) < 1e-6);
}

TEST_CASE("softmax examples") {
    CHECK(softmax(Var(Tensor::vector({0, 0})), 0).value() == Tensor::vector({0.5, 0.5}));

    auto big = softmax(Var(Tensor::vector({1000, 1000, 1000})), 0).value();
    for (double v : big.values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto y = softmax(Var(Tensor::vector({1, 2, 3})), 0).value();
    auto ref = oracle::softmax({1, 2, 3});
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);

    CHECK_THROWS_AS(softmax(Var(Tensor({2, 2})), 2), ContractError);
}

TEST_CASE("softmax slices sum to one and ignore constant shifts, any axis") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = rng.normal_tensor({3, 4, 5}, 4.0);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            Tensor y = softmax(Var(x), axis).value();
            const std::size_t len = x.shape()[axis];
            std::size_t inner = 1;
            for (std::size_t a = axis + 1; a < 3; ++a) inner *= x.shape()[a];
            const std::size_t outer = x.numel() / (len * inner);
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    double s = 0;
                    for (std::size_t l = 0; l < len; ++l) s += y[o * len * inner + l * inner + i];
                    CHECK(std::abs(s - 1.0) < 1e-9);
                }
        }
        Tensor shifted = x;
        for (auto& v : shifted.values()) v += 123.25;
        CHECK(oracle::max_abs_diff(softmax(Var(x), 2).value(), softmax(Var(shifted), 2).value()) < 1e-12);
    }
}

TEST_CASE("backward: linear and quadratic closed forms") {
    Rng rng(2);
    Var w(rng.normal_tensor({3, 4}), true);
    backward(sum(w));
    CHECK(w.grad() == Tensor::ones({3, 4}));

    Var u(rng.normal_tensor({5}), true);
    backward(sum(mul(u, u)));
    for (std::size_t i = 0; i < 5; ++i) CHECK(u.grad()[i] == 2.0 * u.value()[i]);
}

TEST_CASE("backward rejects non-scalar losses") {
    Var w(Tensor::ones({2, 2}), true);
    CHECK_THROWS_AS(backward(scale(w, 2.0)), ContractError);
}

TEST_CASE("fan-out gradients add exactly") {
    Rng rng(9);
    Tensor x0 = rng.normal_tensor({4, 3});
    auto f = [](const Var& x) { return sum(square(x)); };
    auto g = [](const Var& x) { return sum(neurodec::tanh(x)); };

    Var xf(x0, true), xg(x0, true), xs(x0, true);
    backward(f(xf));
    backward(g(xg));
    backward(add(f(xs), g(xs)));
    Tensor expected = xf.grad();
    for (std::size_t i = 0; i < expected.numel(); ++i) expected[i] += xg.grad()[i];
    CHECK(xs.grad() == expected);
}

TEST_CASE("topological order visits each node once on a diamond") {
    Var x(Tensor::ones({2}), true);
    Var a = scale(x, 2.0);
    Var b = square(x);
    Var loss = sum(mul(add(a, b), a));
    auto order = topo_order(loss);
    std::set<Node*> unique(order.begin(), order.end());
    CHECK(unique.size() == order.size());
    CHECK(order.back() == loss.node());
    CHECK(order.front() == x.node());
}

TEST_CASE("every differentiable op matches finite differences") {
    Rng rng(21);
    const Tensor m = rng.normal_tensor({4, 6});
    const Tensor row = rng.normal_tensor({6});
    const Tensor other = rng.normal_tensor({4, 6});
    const Tensor right = rng.normal_tensor({6, 3});
    const Tensor gamma = rng.normal_tensor({6});
    struct Case {
        const char* name;
        std::function<Var(const Var&)> op;
        double tol;
    };
    const std::vector<std::size_t> rows = {3, 0, 0, 2, 1};
    const std::vector<std::size_t> pick = {5, 0, 2, 1};
    std::vector<std::size_t> perm(24);
    for (std::size_t i = 0; i < 24; ++i) perm[i] = (i * 7) % 24;
    const std::vector<Case> cases = {
        {"add", [&](const Var& x) { return add(x, Var(other)); }, 1e-6},
        {"sub", [&](const Var& x) { return sub(Var(other), x); }, 1e-6},
        {"mul", [&](const Var& x) { return mul(x, Var(other)); }, 1e-6},
        {"scale", [](const Var& x) { return scale(x, -2.5); }, 1e-6},
        {"add_row", [&](const Var& x) { return add_row(x, Var(row)); }, 1e-6},
        {"mul_row", [&](const Var& x) { return mul_row(x, Var(row)); }, 1e-6},
        {"matmul", [&](const Var& x) { return matmul(x, Var(right)); }, 1e-6},
        {"matmul_nt", [&](const Var& x) { return matmul_nt(x, Var(other)); }, 1e-6},
        {"transpose", [](const Var& x) { return transpose(x); }, 1e-6},
        {"slice_cols", [](const Var& x) { return slice_cols(x, 1, 4); }, 1e-6},
        {"gather_rows", [&](const Var& x) { return gather_rows(x, rows); }, 1e-6},
        {"pick_cols", [&](const Var& x) { return pick_cols(x, pick); }, 1e-6},
        {"gather_elements", [&](const Var& x) { return gather_elements(x, perm, {6, 4}); }, 1e-6},
        {"row_sums", [](const Var& x) { return row_sums(x); }, 1e-6},
        {"mean_rows", [](const Var& x) { return mean_rows(x); }, 1e-6},
        {"reshape", [](const Var& x) { return reshape(x, {8, 3}); }, 1e-6},
        {"square", [](const Var& x) { return square(x); }, 1e-4},
        {"relu", [](const Var& x) { return relu(x); }, 1e-4},
        {"gelu", [](const Var& x) { return gelu(x); }, 1e-4},
        {"silu", [](const Var& x) { return silu(x); }, 1e-4},
        {"sigmoid", [](const Var& x) { return sigmoid(x); }, 1e-4},
        {"tanh", [](const Var& x) { return neurodec::tanh(x); }, 1e-4},
        {"softmax0", [](const Var& x) { return softmax(x, 0); }, 1e-4},
        {"softmax1", [](const Var& x) { return softmax(x, 1); }, 1e-4},
        {"logsumexp_rows", [](const Var& x) { return logsumexp_rows(x); }, 1e-4},
        {"layer_norm", [&](const Var& x) { return layer_norm(x, Var(gamma), Var(row)); }, 1e-4},
        {"normalize_rows", [](const Var& x) { return normalize_rows(x); }, 1e-4},
        {"cross_entropy", [&](const Var& x) { return cross_entropy(x, pick); }, 1e-4},
        {"im2col", [](const Var& x) { return im2col(reshape(x, {4, 6}), 2, 2, 3, 1, 1); }, 1e-6},
        {"upsample2x", [](const Var& x) { return upsample2x(x, 2, 2); }, 1e-6},
    };
    for (const auto& c : cases) {
        CAPTURE(c.name);
        auto g = grads_of(c.op, m, 100);
        CHECK(oracle::max_rel_error(g.autodiff, g.numeric, 1e-7) < c.tol);
    }
    // Second operand gradients for the binary ops.
    auto g = grads_of([&](const Var& r) { return layer_norm(Var(m), r, Var(row)); }, gamma, 7);
    CHECK(oracle::max_rel_error(g.autodiff, g.numeric, 1e-7) < 1e-4);
    g = grads_of([&](const Var& r) { return add_row(Var(m), r); }, row, 8);
    CHECK(oracle::max_rel_error(g.autodiff, g.numeric, 1e-7) < 1e-6);
    g = grads_of([&](const Var& r) { return mul_row(Var(m), r); }, row, 8);
    CHECK(oracle::max_rel_error(g.autodiff, g.numeric, 1e-7) < 1e-6);
}

TEST_CASE("adamw: zero gradient and zero decay leaves parameters unchanged") {
    Tensor p = Tensor::vector({1.0, -2.0, 3.5});
    const Tensor before = p;
    AdamWState st;
    st.config = {0.1, 0.9, 0.999, 1e-8, 0.0};
    Tensor* ptrs[] = {&p};
    Tensor grads[] = {Tensor({3})};
    adamw_step(ptrs, grads, st);
    CHECK(p == before);
    CHECK(st.step == 1);
}

TEST_CASE("adamw: first step is -lr * g / (|g| + eps) after bias correction") {
    const double lr = 0.01, eps = 1e-8;
    Tensor p = Tensor::vector({0.5, -1.0, 2.0, 0.0});
    const Tensor p0 = p;
    const Tensor g = Tensor::vector({0.3, -4.0, 1e-3, 2.0});
    AdamWState st;
    st.config = {lr, 0.9, 0.999, eps, 0.0};
    Tensor* ptrs[] = {&p};
    Tensor grads[] = {g};
    adamw_step(ptrs, grads, st);
    for (std::size_t i = 0; i < 4; ++i) {
        // Scalar oracle: m_hat = g, v_hat = g^2 after bias correction.
        const double expected = p0[i] - lr * g[i] / (std::abs(g[i]) + eps);
        CHECK(p[i] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("adamw: decoupled decay shrinks the parameter itself") {
    Tensor p = Tensor::vector({2.0, -4.0});
    AdamWState st;
    st.config = {1.0, 0.9, 0.999, 1e-8, 0.05};
    Tensor* ptrs[] = {&p};
    Tensor grads[] = {Tensor({2})};
    adamw_step(ptrs, grads, st);
    CHECK(p[0] == doctest::Approx(2.0 * 0.95).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(-4.0 * 0.95).epsilon(1e-15));
    CHECK(st.m[0] == Tensor({2}));
}

TEST_CASE("adamw: shape mismatch is rejected") {
    Tensor p({3});
    AdamWState st;
    Tensor* ptrs[] = {&p};
    Tensor grads[] = {Tensor({4})};
    CHECK_THROWS_AS(adamw_step(ptrs, grads, st), ShapeError);
}

TEST_CASE("warmup cosine schedule") {
    CHECK(warmup_cosine_lr(0, 100, 10, 1.0) == doctest::Approx(0.1));
    CHECK(warmup_cosine_lr(9, 100, 10, 1.0) == doctest::Approx(1.0));
    CHECK(warmup_cosine_lr(10, 100, 10, 1.0) == doctest::Approx(1.0));
    CHECK(warmup_cosine_lr(55, 100, 10, 1.0) == doctest::Approx(0.5));
    CHECK(warmup_cosine_lr(100, 100, 10, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("grad_check: quadratic, corrupted gradient, non-determinism") {
    Rng rng(4);
    Var w(rng.normal_tensor({3, 3}), true);
    ParamSet ps;
    ps.add("w", w);
    const Tensor a = rng.normal_tensor({3, 3});
    LossFn quad = [&] { return sum(mul(square(sub(w, Var(a))), Var(Tensor({3, 3}, 0.7)))); };

    auto rep = grad_check(quad, ps, {1e-5, 1e-9});
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-9);

    ps.zero_grad();
    backward(quad());
    Tensor bad = w.grad();
    for (auto& v : bad.values()) v *= 1.01;
    ps.zero_grad();
    auto rep_bad = grad_check_against(quad, ps, {bad}, {1e-5, 1e-4});
    CHECK_FALSE(rep_bad.passed);

    int calls = 0;
    LossFn flaky = [&] { return add_scalar(sum(square(w)), 1e-3 * (++calls)); };
    auto rep_flaky = grad_check(flaky, ps);
    CHECK(rep_flaky.aborted);
    CHECK_FALSE(rep_flaky.passed);
    CHECK(rep_flaky.diagnostic.find("deterministic") != std::string::npos);
}

TEST_CASE("grad_check: layer-norm + attention stack") {
    Rng rng(17);
    nn::TransformerConfig cfg{2, 8, 2, 2.0, 4};
    nn::TransformerStack stack(cfg, rng);
    ParamSet ps;
    stack.collect(ps, "stack.");
    const Tensor x = rng.normal_tensor({5, 8});
    const Tensor w = rng.normal_tensor({5, 8});
    LossFn loss = [&] { return sum(mul(stack(Var(x)), Var(w))); };
    auto rep = grad_check(loss, ps, {1e-5, 1e-4, 16});
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("non-finite values are surfaced immediately") {
    set_finite_check(FiniteCheck::Always);
    Var x(Tensor::vector({1e308, 1e308}));
    CHECK_THROWS_AS(scale(x, 10.0), NumericalError);
#ifdef NDEBUG
    set_finite_check(FiniteCheck::Sampled);
#endif
}

TEST_CASE("kernels: parallel agrees with serial reference and is thread-count invariant") {
    Rng rng(8);
    const std::size_t m = 37, k = 29, n = 41;
    Tensor a = rng.normal_tensor({m, k}), b = rng.normal_tensor({k, n}), bt = rng.normal_tensor({n, k});
    Tensor at = rng.normal_tensor({k, m});
    Tensor s({m, n}), p1({m, n}), p4({m, n});
    auto run = [&](auto serial, auto parallel, const Tensor& x, const Tensor& y) {
        serial(x.data(), y.data(), s.data(), m, k, n, false);
        kernels::set_num_threads(1);
        parallel(x.data(), y.data(), p1.data(), m, k, n, false);
        kernels::set_num_threads(4);
        parallel(x.data(), y.data(), p4.data(), m, k, n, false);
        kernels::set_num_threads(1);
        CHECK(oracle::max_rel_error(s, p1, 1e-12) < 1e-12);
        CHECK(p1 == p4);
    };
    run(kernels::serial::gemm_nn, kernels::parallel::gemm_nn, a, b);
    run(kernels::serial::gemm_nt, kernels::parallel::gemm_nt, a, bt);
    run(kernels::serial::gemm_tn, kernels::parallel::gemm_tn, at, b);

    const std::size_t h = 9, w = 7, c = 3;
    Tensor img = rng.normal_tensor({h * w, c});
    for (std::size_t stride : {1u, 2u}) {
        const std::size_t ho = kernels::conv_out_size(h, 3, stride, 1), wo = kernels::conv_out_size(w, 3, stride, 1);
        Tensor cs({ho * wo, 27}), cp({ho * wo, 27});
        kernels::serial::im2col(img.data(), cs.data(), h, w, c, 3, stride, 1);
        kernels::parallel::im2col(img.data(), cp.data(), h, w, c, 3, stride, 1);
        CHECK(cs == cp);
        Tensor xs({h * w, c}), xp({h * w, c});
        kernels::serial::col2im(cs.data(), xs.data(), h, w, c, 3, stride, 1);
        kernels::parallel::col2im(cs.data(), xp.data(), h, w, c, 3, stride, 1);
        CHECK(oracle::max_abs_diff(xs, xp) < 1e-12);
    }

    Tensor sm_s({m, k}), sm_p({m, k});
    kernels::serial::softmax_rows(a.data(), sm_s.data(), m, k);
    kernels::parallel::softmax_rows(a.data(), sm_p.data(), m, k);
    CHECK(sm_s == sm_p);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto dir = temp_dir("ckpt");
    Rng rng(31);
    Checkpoint ck;
    ck.meta = {{"stage", "unit"}};
    ck.tensors.emplace_back("a.weight", rng.normal_tensor({3, 5}));
    ck.tensors.emplace_back("a.bias", Tensor::vector({0.1, -0.0, 1e-300}));
    ck.tensors.emplace_back("scalar", Tensor::scalar(std::nextafter(1.0, 2.0)));
    save_checkpoint(dir / "m.ckpt", ck);
    Checkpoint back = load_checkpoint(dir / "m.ckpt");
    REQUIRE(back.tensors.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.tensors[i].first == ck.tensors[i].first);
        CHECK(back.tensors[i].second.shape() == ck.tensors[i].second.shape());
        CHECK(std::memcmp(back.tensors[i].second.data(), ck.tensors[i].second.data(),
                          ck.tensors[i].second.numel() * sizeof(double)) == 0);
    }
    CHECK(back.meta["stage"] == "unit");

    std::ifstream in(dir / "m.ckpt");
    auto manifest = nlohmann::json::parse(in);
    CHECK(manifest["tensors"][0]["dtype"] == "f64");
    CHECK(manifest["tensors"][1]["byte_offset"] == 15 * 8);
    CHECK(manifest["tensors"][1]["byte_length"] == 3 * 8);
}

TEST_CASE("checkpoint errors: missing file, truncated blob, shape mismatch") {
    auto dir = temp_dir("ckpt_err");
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), MissingArtifact);

    Checkpoint ck;
    ck.tensors.emplace_back("w", Tensor({4, 4}, 1.0));
    save_checkpoint(dir / "t.ckpt", ck);
    fs::resize_file(checkpoint_blob_path(dir / "t.ckpt"), 40);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), FormatError);

    save_checkpoint(dir / "t.ckpt", ck);
    ParamSet ps;
    ps.add("w", Var(Tensor({2, 2}), true));
    CHECK_THROWS_AS(restore_params(load_checkpoint(dir / "t.ckpt"), ps), ShapeError);
}
