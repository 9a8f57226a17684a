#pragma once

// Transformer and convolution building blocks shared by the auto-encoders and
// the diffusion denoiser. Token sequences are (tokens x width) matrices;
// spatial maps are channels-last ((h*w) x channels).

#include <cstddef>
#include <string>
#include <vector>

#include "neurodec/autograd.hpp"
#include "neurodec/params.hpp"
#include "neurodec/rng.hpp"

namespace neurodec::nn {

struct TransformerConfig {
    std::size_t depth = 1;
    std::size_t dim = 64;
    std::size_t heads = 4;
    double mlp_ratio = 4.0;
    std::size_t patch_size = 16;

    void validate() const;
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

class Linear {
public:
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

    Var operator()(const Var& x) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::size_t in_features() const { return weight.shape()[0]; }
    std::size_t out_features() const { return weight.shape()[1]; }

    Var weight;  // in x out
    Var bias;    // out (undefined when disabled)
};

class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
    void collect(ParamSet& ps, const std::string& prefix) const;

    Var gamma;
    Var beta;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(std::size_t dim, std::size_t hidden, Rng& rng);

    Var operator()(const Var& x) const { return fc2(gelu(fc1(x))); }
    void collect(ParamSet& ps, const std::string& prefix) const;

    Linear fc1, fc2;
};

// Scaled dot-product attention for one head: softmax(q k^T / sqrt(d_k)) v.
Var attention(const Var& q, const Var& k, const Var& v);
// Multi-head form: q, k, v are split column-wise into `heads` equal slices.
Var multihead_attention(const Var& q, const Var& k, const Var& v, std::size_t heads);

class SelfAttention {
public:
    SelfAttention() = default;
    SelfAttention(std::size_t dim, std::size_t heads, Rng& rng);

    Var operator()(const Var& x) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::size_t heads = 1;
    Linear qkv, proj;
};

// Pre-norm block: x + attn(ln1(x)), then x + mlp(ln2(x)).
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, std::size_t heads, double mlp_ratio, Rng& rng);

    Var operator()(const Var& x) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    LayerNorm ln1, ln2;
    SelfAttention attn;
    Mlp mlp;
};

// `depth` blocks followed by a final LayerNorm.
class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(const TransformerConfig& cfg, Rng& rng);

    Var operator()(const Var& x) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::vector<TransformerBlock> blocks;
    LayerNorm norm;
};

// Projection weights of one cross-attention module:
//   Q = q_side W_q + b_q, K = kv_side W_k + b_k, V = kv_side W_v + b_v.
struct CrossAttentionParams {
    Var w_q, b_q, w_k, b_k, w_v, b_v;

    std::size_t d_k() const { return w_k.shape()[1]; }
    static CrossAttentionParams init(std::size_t q_width, std::size_t kv_width, std::size_t d_k, Rng& rng,
                                     double weight_scale = 1.0);
    static CrossAttentionParams zeros(std::size_t q_width, std::size_t kv_width, std::size_t d_k);
    void collect(ParamSet& ps, const std::string& prefix) const;
};

// CA(Q, K, V) = softmax(Q K^T / sqrt(d_k)) V with Q from `q_side` and K, V
// from `kv_side`. Output has the query-side length and width d_k.
Var cross_attention(const Var& q_side, const Var& kv_side, const CrossAttentionParams& p);

// Multi-head cross-attention with an output projection, used inside the
// diffusion denoiser.
class CrossAttention {
public:
    CrossAttention() = default;
    CrossAttention(std::size_t q_width, std::size_t kv_width, std::size_t inner, std::size_t heads, Rng& rng);

    Var operator()(const Var& q_side, const Var& kv_side) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::size_t heads = 1;
    CrossAttentionParams proj;
    Linear out;
};

// Tokenizer for patch matrices: a linear map of each patch (a stride ==
// kernel convolution) plus a learned per-position embedding.
class PatchEmbed {
public:
    PatchEmbed() = default;
    PatchEmbed(std::size_t patch_dim, std::size_t num_patches, std::size_t dim, Rng& rng);

    Var operator()(const Var& patches) const;
    // Tokens before the positional embedding is added.
    Var project(const Var& patches) const { return proj(patches); }
    void collect(ParamSet& ps, const std::string& prefix) const;

    Linear proj;
    Var pos;  // num_patches x dim
};

struct FmriPatches {
    Tensor patches;  // (n_patches x patch)
    std::size_t padding = 0;
};
// Splits a voxel vector into consecutive patches, zero-padding the tail.
FmriPatches patchify_fmri(const Tensor& voxels, std::size_t patch);

// Sinusoidal time features: first half sin(t f_i), second half cos(t f_i),
// f_i = 10000^(-i/half).
Tensor sinusoidal_embedding(double t, std::size_t dim);

class TimeEmbedding {
public:
    TimeEmbedding() = default;
    TimeEmbedding(std::size_t sin_dim, std::size_t out_dim, std::size_t max_t, Rng& rng);

    Var operator()(std::size_t t) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::size_t sin_dim = 0;
    std::size_t max_t = 0;
    Linear fc1, fc2;
};

// 2-D convolution over channels-last maps via im2col.
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad,
           Rng& rng);

    // x: (h*w) x in_ch. Output is (ho*wo) x out_ch; ho/wo via out_size().
    Var operator()(const Var& x, std::size_t h, std::size_t w) const;
    std::size_t out_size(std::size_t in) const;
    void collect(ParamSet& ps, const std::string& prefix) const;

    std::size_t kernel = 3, stride = 1, pad = 1;
    Var weight;  // (k*k*in) x out
    Var bias;
};

}  // namespace neurodec::nn
