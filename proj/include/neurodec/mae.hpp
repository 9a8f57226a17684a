#pragma once

// Asymmetric masked auto-encoder over a fixed-length patch matrix.
//
//   patches (P x patch_dim) -> embed + pos -> mask -> encoder (visible rows)
//   -> decoder embed -> mask tokens at masked rows + decoder pos
//   -> decoder -> head -> (P x patch_dim)
//
// Parameter names: "encoder.*" covers the tokenizer and encoder stack,
// "decoder.*" everything after it.

#include <cstddef>
#include <string>

#include "neurodec/nn.hpp"
#include "neurodec/patch_mask.hpp"

namespace neurodec {

struct MaeConfig {
    std::size_t num_patches = 64;
    std::size_t patch_dim = 16;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t depth_enc = 4;
    std::size_t dec_dim = 64;
    std::size_t dec_heads = 4;
    std::size_t depth_dec = 2;
    double mlp_ratio = 2.0;

    void validate() const;
};

struct MaeEncoding {
    MaskedSequence mask;  // visible_tokens holds the embedded visible patches
    Var latent;           // encoder output, visible rows only
};

class MaskedAutoencoder {
public:
    MaskedAutoencoder() = default;
    MaskedAutoencoder(const MaeConfig& cfg, Rng& rng);

    const MaeConfig& config() const { return cfg_; }

    MaeEncoding encode(const Var& patches, double mask_ratio, Rng& rng) const;
    // Unmasked encoder output (P x dim); the conditioning tokens downstream.
    Var encode_all(const Var& patches) const;
    // Full-length decoder input (P x dec_dim).
    Var decoder_input(const MaeEncoding& enc) const;
    // Decoder stack and prediction head (P x patch_dim).
    Var decode(const Var& decoder_in) const;
    Var reconstruct(const Var& patches, double mask_ratio, Rng& rng) const;

    void collect(ParamSet& ps, const std::string& prefix = {}) const;
    ParamSet params(const std::string& prefix = {}) const;

    nn::PatchEmbed embed;
    nn::TransformerStack encoder;
    nn::Linear dec_embed;
    Var mask_token;  // 1 x dec_dim
    Var dec_pos;     // P x dec_dim
    nn::TransformerStack decoder;
    nn::Linear head;

private:
    MaeConfig cfg_;
};

}  // namespace neurodec

#include <json.hpp>

namespace neurodec {

nlohmann::json to_json(const MaeConfig& c);
MaeConfig mae_config_from_json(const nlohmann::json& j);

}  // namespace neurodec
