#include "neurodec/nn.hpp"

#include <cmath>

#include "neurodec/errors.hpp"
#include "neurodec/kernels.hpp"

namespace neurodec::nn {

namespace {

Var param(Tensor t) { return Var(std::move(t), true); }

}  // namespace

void TransformerConfig::validate() const {
    if (depth < 1) throw ContractError("transformer: depth must be >= 1");
    if (heads == 0 || dim % heads != 0) {
        throw ContractError("transformer: dim " + std::to_string(dim) + " not divisible by heads " +
                            std::to_string(heads));
    }
    if (mlp_ratio <= 0.0) throw ContractError("transformer: mlp_ratio must be positive");
    if (patch_size == 0) throw ContractError("transformer: patch_size must be positive");
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return rng.uniform_tensor({fan_in, fan_out}, -a, a);
}

// ------------------------------------------------------------------ Linear

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(param(xavier_uniform(in, out, rng))) {
    if (with_bias) bias = param(Tensor({out}));
}

Var Linear::operator()(const Var& x) const {
    Var y = matmul(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
}

void Linear::collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + "weight", weight);
    if (bias.defined()) ps.add(prefix + "bias", bias);
}

LayerNorm::LayerNorm(std::size_t dim) : gamma(param(Tensor::ones({dim}))), beta(param(Tensor({dim}))) {}

void LayerNorm::collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + "gamma", gamma);
    ps.add(prefix + "beta", beta);
}

Mlp::Mlp(std::size_t dim, std::size_t hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

void Mlp::collect(ParamSet& ps, const std::string& prefix) const {
    fc1.collect(ps, prefix + "fc1.");
    fc2.collect(ps, prefix + "fc2.");
}

// --------------------------------------------------------------- attention

Var attention(const Var& q, const Var& k, const Var& v) {
    if (k.value().rows() == 0) throw ContractError("attention: no keys");
    if (q.value().cols() != k.value().cols()) {
        throw ShapeError("attention: query width " + std::to_string(q.value().cols()) + " != key width " +
                         std::to_string(k.value().cols()));
    }
    if (k.value().rows() != v.value().rows()) throw ShapeError("attention: key/value counts differ");
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(k.value().cols()));
    Var weights = softmax(scale(matmul_nt(q, k), inv_sqrt_dk), 1);
    return matmul(weights, v);
}

Var multihead_attention(const Var& q, const Var& k, const Var& v, std::size_t heads) {
    if (heads == 1) return attention(q, k, v);
    const std::size_t width = q.value().cols();
    if (width % heads != 0 || k.value().cols() != width || v.value().cols() != width) {
        throw ShapeError("multihead_attention: widths must match and divide into heads");
    }
    const std::size_t hd = width / heads;
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        outs.push_back(attention(slice_cols(q, h * hd, (h + 1) * hd), slice_cols(k, h * hd, (h + 1) * hd),
                                 slice_cols(v, h * hd, (h + 1) * hd)));
    }
    return concat_cols(outs);
}

SelfAttention::SelfAttention(std::size_t dim, std::size_t heads_, Rng& rng)
    : heads(heads_), qkv(dim, 3 * dim, rng), proj(dim, dim, rng) {}

Var SelfAttention::operator()(const Var& x) const {
    const std::size_t dim = proj.in_features();
    Var packed = qkv(x);
    Var q = slice_cols(packed, 0, dim);
    Var k = slice_cols(packed, dim, 2 * dim);
    Var v = slice_cols(packed, 2 * dim, 3 * dim);
    return proj(multihead_attention(q, k, v, heads));
}

void SelfAttention::collect(ParamSet& ps, const std::string& prefix) const {
    qkv.collect(ps, prefix + "qkv.");
    proj.collect(ps, prefix + "proj.");
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, double mlp_ratio, Rng& rng)
    : ln1(dim),
      ln2(dim),
      attn(dim, heads, rng),
      mlp(dim, static_cast<std::size_t>(std::lround(static_cast<double>(dim) * mlp_ratio)), rng) {}

Var TransformerBlock::operator()(const Var& x) const {
    Var h = add(x, attn(ln1(x)));
    return add(h, mlp(ln2(h)));
}

void TransformerBlock::collect(ParamSet& ps, const std::string& prefix) const {
    ln1.collect(ps, prefix + "ln1.");
    attn.collect(ps, prefix + "attn.");
    ln2.collect(ps, prefix + "ln2.");
    mlp.collect(ps, prefix + "mlp.");
}

TransformerStack::TransformerStack(const TransformerConfig& cfg, Rng& rng) : norm(cfg.dim) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.depth; ++i) blocks.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
}

Var TransformerStack::operator()(const Var& x) const {
    Var h = x;
    for (const auto& b : blocks) h = b(h);
    return norm(h);
}

void TransformerStack::collect(ParamSet& ps, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(ps, prefix + "blocks." + std::to_string(i) + ".");
    norm.collect(ps, prefix + "norm.");
}

// ---------------------------------------------------------- cross-attention

CrossAttentionParams CrossAttentionParams::init(std::size_t q_width, std::size_t kv_width, std::size_t d_k,
                                                Rng& rng, double weight_scale) {
    CrossAttentionParams p;
    auto w = [&](std::size_t in) {
        Tensor t = xavier_uniform(in, d_k, rng);
        for (auto& v : t.values()) v *= weight_scale;
        return param(std::move(t));
    };
    p.w_q = w(q_width);
    p.b_q = param(Tensor({d_k}));
    p.w_k = w(kv_width);
    p.b_k = param(Tensor({d_k}));
    p.w_v = w(kv_width);
    p.b_v = param(Tensor({d_k}));
    return p;
}

CrossAttentionParams CrossAttentionParams::zeros(std::size_t q_width, std::size_t kv_width, std::size_t d_k) {
    CrossAttentionParams p;
    p.w_q = param(Tensor({q_width, d_k}));
    p.b_q = param(Tensor({d_k}));
    p.w_k = param(Tensor({kv_width, d_k}));
    p.b_k = param(Tensor({d_k}));
    p.w_v = param(Tensor({kv_width, d_k}));
    p.b_v = param(Tensor({d_k}));
    return p;
}

void CrossAttentionParams::collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + "w_q", w_q);
    ps.add(prefix + "b_q", b_q);
    ps.add(prefix + "w_k", w_k);
    ps.add(prefix + "b_k", b_k);
    ps.add(prefix + "w_v", w_v);
    ps.add(prefix + "b_v", b_v);
}

Var cross_attention(const Var& q_side, const Var& kv_side, const CrossAttentionParams& p) {
    if (kv_side.value().rank() != 2 || kv_side.value().rows() == 0) {
        throw ContractError("cross_attention: key/value side has no tokens");
    }
    if (q_side.value().cols() != p.w_q.shape()[0] || kv_side.value().cols() != p.w_k.shape()[0]) {
        throw ShapeError("cross_attention: token widths " + shape_str(q_side.shape()) + " / " +
                         shape_str(kv_side.shape()) + " do not match projections");
    }
    Var q = add_row(matmul(q_side, p.w_q), p.b_q);
    Var k = add_row(matmul(kv_side, p.w_k), p.b_k);
    Var v = add_row(matmul(kv_side, p.w_v), p.b_v);
    return attention(q, k, v);
}

CrossAttention::CrossAttention(std::size_t q_width, std::size_t kv_width, std::size_t inner, std::size_t heads_,
                               Rng& rng)
    : heads(heads_), proj(CrossAttentionParams::init(q_width, kv_width, inner, rng)), out(inner, q_width, rng) {
    if (heads == 0 || inner % heads != 0) throw ContractError("CrossAttention: inner width not divisible by heads");
}

Var CrossAttention::operator()(const Var& q_side, const Var& kv_side) const {
    if (kv_side.value().rank() != 2 || kv_side.value().rows() == 0) {
        throw ContractError("cross_attention: key/value side has no tokens");
    }
    if (kv_side.value().cols() != proj.w_k.shape()[0]) {
        throw ShapeError("cross_attention: condition width " + std::to_string(kv_side.value().cols()) +
                         " does not match projection input " + std::to_string(proj.w_k.shape()[0]));
    }
    Var q = add_row(matmul(q_side, proj.w_q), proj.b_q);
    Var k = add_row(matmul(kv_side, proj.w_k), proj.b_k);
    Var v = add_row(matmul(kv_side, proj.w_v), proj.b_v);
    return out(multihead_attention(q, k, v, heads));
}

void CrossAttention::collect(ParamSet& ps, const std::string& prefix) const {
    proj.collect(ps, prefix);
    out.collect(ps, prefix + "out.");
}

// ------------------------------------------------------------- embeddings

PatchEmbed::PatchEmbed(std::size_t patch_dim, std::size_t num_patches, std::size_t dim, Rng& rng)
    : proj(patch_dim, dim, rng), pos(param(rng.normal_tensor({num_patches, dim}, 0.02))) {}

Var PatchEmbed::operator()(const Var& patches) const {
    if (patches.value().rows() != pos.shape()[0]) {
        throw ShapeError("patch_embed: expected " + std::to_string(pos.shape()[0]) + " patches, got " +
                         std::to_string(patches.value().rows()));
    }
    return add(proj(patches), pos);
}

void PatchEmbed::collect(ParamSet& ps, const std::string& prefix) const {
    proj.collect(ps, prefix + "proj.");
    ps.add(prefix + "pos", pos);
}

FmriPatches patchify_fmri(const Tensor& voxels, std::size_t patch) {
    if (voxels.numel() == 0) throw ContractError("patchify_fmri: empty voxel vector");
    if (patch == 0) throw ContractError("patchify_fmri: patch size must be positive");
    const std::size_t n = voxels.numel();
    const std::size_t count = (n + patch - 1) / patch;
    FmriPatches out{Tensor({count, patch}), count * patch - n};
    std::copy_n(voxels.data(), n, out.patches.data());
    return out;
}

Tensor sinusoidal_embedding(double t, std::size_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ContractError("sinusoidal_embedding: dim must be even and >= 2");
    const std::size_t half = dim / 2;
    Tensor e({1, dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

TimeEmbedding::TimeEmbedding(std::size_t sin_dim_, std::size_t out_dim, std::size_t max_t_, Rng& rng)
    : sin_dim(sin_dim_), max_t(max_t_), fc1(sin_dim_, out_dim, rng), fc2(out_dim, out_dim, rng) {}

Var TimeEmbedding::operator()(std::size_t t) const {
    if (t > max_t) {
        throw ContractError("time_embedding: step " + std::to_string(t) + " outside [0, " + std::to_string(max_t) + "]");
    }
    return fc2(silu(fc1(Var(sinusoidal_embedding(static_cast<double>(t), sin_dim)))));
}

void TimeEmbedding::collect(ParamSet& ps, const std::string& prefix) const {
    fc1.collect(ps, prefix + "fc1.");
    fc2.collect(ps, prefix + "fc2.");
}

// ------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_, std::size_t stride_, std::size_t pad_,
               Rng& rng)
    : kernel(kernel_),
      stride(stride_),
      pad(pad_),
      weight(param(xavier_uniform(kernel_ * kernel_ * in_ch, out_ch, rng))),
      bias(param(Tensor({out_ch}))) {}

std::size_t Conv2d::out_size(std::size_t in) const { return kernels::conv_out_size(in, kernel, stride, pad); }

Var Conv2d::operator()(const Var& x, std::size_t h, std::size_t w) const {
    const std::size_t in_ch = weight.shape()[0] / (kernel * kernel);
    if (x.value().cols() != in_ch) {
        throw ShapeError("conv2d: input has " + std::to_string(x.value().cols()) + " channels, expected " +
                         std::to_string(in_ch));
    }
    Var cols = (kernel == 1 && stride == 1 && pad == 0) ? x : im2col(x, h, w, kernel, stride, pad);
    return add_row(matmul(cols, weight), bias);
}

void Conv2d::collect(ParamSet& ps, const std::string& prefix) const {
    ps.add(prefix + "weight", weight);
    ps.add(prefix + "bias", bias);
}

}  // namespace neurodec::nn
