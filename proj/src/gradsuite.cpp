#include "neurodec/gradsuite.hpp"

#include <memory>

#include "neurodec/diffusion.hpp"
#include "neurodec/eval.hpp"
#include "neurodec/xmodal.hpp"

namespace neurodec {

namespace {

// loss = sum(op(x) * w) for a fixed random weighting w.
GradCase op_case(const std::string& name, double tol, const Tensor& x0, std::function<Var(const Var&)> op, Rng& rng) {
    Var x(x0, true);
    Tensor w;
    {
        NoGradGuard ng;
        w = rng.normal_tensor(op(x).shape());
    }
    ParamSet ps;
    ps.add("x", x);
    return {name, tol, ps, [x, w, op] { return sum(mul(op(x), Var(w))); }};
}

}  // namespace

std::vector<GradCase> op_grad_cases(std::uint64_t seed) {
    Rng rng(seed);
    const Tensor m = rng.normal_tensor({4, 6});
    const Tensor other = rng.normal_tensor({4, 6});
    const Tensor right = rng.normal_tensor({6, 3});
    const Tensor row = rng.normal_tensor({6});
    const Tensor gamma = rng.normal_tensor({6});
    auto rows = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{3, 0, 0, 2, 1});
    auto pick = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{5, 0, 2, 1});
    auto perm = std::make_shared<std::vector<std::size_t>>(24);
    for (std::size_t i = 0; i < 24; ++i) (*perm)[i] = (i * 7) % 24;
    const double lin = 1e-6, nl = 1e-4;
    std::vector<GradCase> c;
    c.push_back(op_case("add", lin, m, [=](const Var& x) { return add(x, Var(other)); }, rng));
    c.push_back(op_case("sub", lin, m, [=](const Var& x) { return sub(Var(other), x); }, rng));
    c.push_back(op_case("mul", lin, m, [=](const Var& x) { return mul(x, Var(other)); }, rng));
    c.push_back(op_case("scale", lin, m, [](const Var& x) { return scale(x, -2.5); }, rng));
    c.push_back(op_case("add_scalar", lin, m, [](const Var& x) { return add_scalar(x, 0.75); }, rng));
    c.push_back(op_case("neg", lin, m, [](const Var& x) { return neg(x); }, rng));
    c.push_back(op_case("add_row", lin, m, [=](const Var& x) { return add_row(x, Var(row)); }, rng));
    c.push_back(op_case("add_row.row", lin, row, [=](const Var& r) { return add_row(Var(m), r); }, rng));
    c.push_back(op_case("mul_row", lin, m, [=](const Var& x) { return mul_row(x, Var(row)); }, rng));
    c.push_back(op_case("mul_row.row", lin, row, [=](const Var& r) { return mul_row(Var(m), r); }, rng));
    c.push_back(op_case("matmul", lin, m, [=](const Var& x) { return matmul(x, Var(right)); }, rng));
    c.push_back(op_case("matmul.rhs", lin, right, [=](const Var& r) { return matmul(Var(m), r); }, rng));
    c.push_back(op_case("matmul_nt", lin, m, [=](const Var& x) { return matmul_nt(x, Var(other)); }, rng));
    c.push_back(op_case("matmul_nt.rhs", lin, other, [=](const Var& r) { return matmul_nt(Var(m), r); }, rng));
    c.push_back(op_case("transpose", lin, m, [](const Var& x) { return transpose(x); }, rng));
    c.push_back(op_case("sum", lin, m, [](const Var& x) { return sum(x); }, rng));
    c.push_back(op_case("mean", lin, m, [](const Var& x) { return mean(x); }, rng));
    c.push_back(op_case("row_sums", lin, m, [](const Var& x) { return row_sums(x); }, rng));
    c.push_back(op_case("mean_rows", lin, m, [](const Var& x) { return mean_rows(x); }, rng));
    c.push_back(op_case("reshape", lin, m, [](const Var& x) { return reshape(x, {8, 3}); }, rng));
    c.push_back(op_case("slice_cols", lin, m, [](const Var& x) { return slice_cols(x, 1, 4); }, rng));
    c.push_back(op_case("concat_cols", lin, m, [=](const Var& x) {
        const Var p[] = {x, Var(other), x};
        return concat_cols(p);
    }, rng));
    c.push_back(op_case("concat_rows", lin, m, [=](const Var& x) {
        const Var p[] = {Var(other), x};
        return concat_rows(p);
    }, rng));
    c.push_back(op_case("gather_rows", lin, m, [=](const Var& x) { return gather_rows(x, *rows); }, rng));
    c.push_back(op_case("broadcast_row", lin, row, [](const Var& r) { return broadcast_row(r, 3); }, rng));
    c.push_back(op_case("pick_cols", lin, m, [=](const Var& x) { return pick_cols(x, *pick); }, rng));
    c.push_back(op_case("gather_elements", lin, m, [=](const Var& x) { return gather_elements(x, *perm, {6, 4}); }, rng));
    c.push_back(op_case("im2col", lin, m, [](const Var& x) { return im2col(reshape(x, {4, 6}), 2, 2, 3, 1, 1); }, rng));
    c.push_back(op_case("im2col.stride2", lin, rng.normal_tensor({16, 2}),
                        [](const Var& x) { return im2col(x, 4, 4, 3, 2, 1); }, rng));
    c.push_back(op_case("upsample2x", lin, m, [](const Var& x) { return upsample2x(x, 2, 2); }, rng));
    c.push_back(op_case("square", nl, m, [](const Var& x) { return square(x); }, rng));
    c.push_back(op_case("relu", nl, m, [](const Var& x) { return relu(x); }, rng));
    c.push_back(op_case("gelu", nl, m, [](const Var& x) { return gelu(x); }, rng));
    c.push_back(op_case("silu", nl, m, [](const Var& x) { return silu(x); }, rng));
    c.push_back(op_case("sigmoid", nl, m, [](const Var& x) { return sigmoid(x); }, rng));
    c.push_back(op_case("tanh", nl, m, [](const Var& x) { return neurodec::tanh(x); }, rng));
    c.push_back(op_case("softmax.axis0", nl, m, [](const Var& x) { return softmax(x, 0); }, rng));
    c.push_back(op_case("softmax.axis1", nl, m, [](const Var& x) { return softmax(x, 1); }, rng));
    c.push_back(op_case("logsumexp_rows", nl, m, [](const Var& x) { return logsumexp_rows(x); }, rng));
    c.push_back(op_case("layer_norm", nl, m, [=](const Var& x) { return layer_norm(x, Var(gamma), Var(row)); }, rng));
    c.push_back(op_case("layer_norm.gamma", nl, gamma, [=](const Var& g) { return layer_norm(Var(m), g, Var(row)); }, rng));
    c.push_back(op_case("layer_norm.beta", lin, row, [=](const Var& b) { return layer_norm(Var(m), Var(gamma), b); }, rng));
    c.push_back(op_case("normalize_rows", nl, m, [](const Var& x) { return normalize_rows(x); }, rng));
    c.push_back(op_case("mse", nl, m, [=](const Var& x) { return mse(x, Var(other)); }, rng));
    c.push_back(op_case("cross_entropy", nl, m, [=](const Var& x) { return cross_entropy(x, *pick); }, rng));
    return c;
}

std::vector<GradCase> loss_grad_cases(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<GradCase> c;

    // contrastive terms on free matrices
    {
        Var a(rng.normal_tensor({3, 5}), true), b(rng.normal_tensor({3, 5}), true);
        ParamSet ps;
        ps.add("d1", a);
        ps.add("d2", b);
        c.push_back({"cross_contrastive", 1e-4, ps, [a, b] { return loss_cross_contrastive(a, b, 0.5); }});
        c.push_back({"self_contrastive", 1e-4, ps, [a, b] { return loss_self_contrastive(a, b, 0.5); }});
        c.push_back({"cross_contrastive.normalized", 1e-4, ps, [a, b] { return loss_cross_contrastive(a, b, 0.1, true); }});
    }

    // full phase-1 objective on a tiny fMRI auto-encoder
    const MaeConfig fm_cfg{4, 8, 8, 2, 2, 8, 2, 1, 2.0};
    auto fmri = std::make_shared<FmriMae>(fm_cfg, 32, 8, rng);
    auto vox = std::make_shared<std::vector<Tensor>>(
        std::vector<Tensor>{rng.normal_tensor({1, 32}), rng.normal_tensor({1, 32})});
    {
        Phase1Config p1;
        p1.mae = fm_cfg;
        p1.patch = 8;
        p1.tau = 0.5;
        c.push_back({"phase1_total", 1e-4, fmri->mae.params(), [fmri, vox, p1] {
                         Rng r(11);
                         return phase1_loss(*fmri, *vox, *vox, p1, r).total;
                     }});
    }

    // phase-2 objective (image decoder frozen, so excluded from the check)
    {
        const MaeConfig im_cfg{4, 48, 8, 2, 2, 8, 2, 1, 2.0};
        ImageMae image(im_cfg, 8, 4, rng);
        auto m = std::make_shared<XModalModel>(XModalModel::create(*fmri, image, 0.5, rng));
        auto imgs = std::make_shared<std::vector<Tensor>>(
            std::vector<Tensor>{rng.uniform_tensor({64, 3}, 0, 1), rng.uniform_tensor({64, 3}, 0, 1)});
        Phase2Config p2;
        p2.gamma_f = 0.25;
        p2.gamma_i = 1.5;
        c.push_back({"phase2_total", 1e-4, m->trainable(), [m, vox, imgs, p2] {
                         Rng r(12);
                         return phase2_loss(*m, *vox, *imgs, p2, r).total;
                     }});
    }

    // noise-prediction loss through both conditioning paths on a 4x4 latent,
    // with mean and flattened time-path pooling
    for (std::size_t tokens : {0u, 3u}) {
        DenoiserConfig dc;
        dc.latent_size = 4;
        dc.latent_channels = 2;
        dc.channels = 4;
        dc.time_dim = 8;
        dc.sin_dim = 8;
        dc.cond_width = 8;
        dc.ca_heads = 2;
        dc.T = 50;
        dc.cond_tokens = tokens;
        auto den = std::make_shared<CondDenoiser>(dc, rng);
        const NoiseSchedule s = NoiseSchedule::linear(50);
        const Tensor z0 = rng.normal_tensor({16, 2}), eps = rng.normal_tensor({16, 2});
        Var cond(rng.normal_tensor({3, 8}), true);
        ParamSet ps = den->params();
        ps.add("cond_tokens", cond);
        c.push_back({tokens ? "denoise_loss_flat" : "denoise_loss", 1e-4, ps,
                     [den, z0, eps, cond, s] { return denoise_loss(*den, z0, 17, eps, cond, s); }});
    }

    // classifier cross-entropy
    {
        ClassifierConfig cc;
        cc.image_size = 8;
        cc.n_classes = 3;
        cc.channels = 2;
        auto clf = std::make_shared<Classifier>(cc, rng);
        const Tensor img = rng.uniform_tensor({64, 3}, 0, 1);
        c.push_back({"classifier_ce", 1e-4, clf->params(), [clf, img] {
                         const std::size_t y[] = {2};
                         return cross_entropy(clf->logits(Var(img)), y);
                     }});
    }
    return c;
}

}  // namespace neurodec
