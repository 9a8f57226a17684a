#include "neurodec/mae.hpp"

#include "neurodec/errors.hpp"

namespace neurodec {

void MaeConfig::validate() const {
    if (num_patches == 0 || patch_dim == 0) throw ConfigError("mae: empty patch geometry");
    nn::TransformerConfig{depth_enc, dim, heads, mlp_ratio, 1}.validate();
    nn::TransformerConfig{depth_dec, dec_dim, dec_heads, mlp_ratio, 1}.validate();
}

MaskedAutoencoder::MaskedAutoencoder(const MaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    embed = nn::PatchEmbed(cfg.patch_dim, cfg.num_patches, cfg.dim, rng);
    encoder = nn::TransformerStack({cfg.depth_enc, cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.patch_dim}, rng);
    dec_embed = nn::Linear(cfg.dim, cfg.dec_dim, rng);
    mask_token = Var(rng.normal_tensor({1, cfg.dec_dim}, 0.02), true);
    dec_pos = Var(rng.normal_tensor({cfg.num_patches, cfg.dec_dim}, 0.02), true);
    decoder = nn::TransformerStack({cfg.depth_dec, cfg.dec_dim, cfg.dec_heads, cfg.mlp_ratio, cfg.patch_dim}, rng);
    head = nn::Linear(cfg.dec_dim, cfg.patch_dim, rng);
}

MaeEncoding MaskedAutoencoder::encode(const Var& patches, double mask_ratio, Rng& rng) const {
    MaeEncoding out;
    out.mask = random_mask(embed(patches), mask_ratio, rng);
    out.latent = encoder(out.mask.visible_tokens);
    return out;
}

Var MaskedAutoencoder::encode_all(const Var& patches) const { return encoder(embed(patches)); }

Var MaskedAutoencoder::decoder_input(const MaeEncoding& enc) const {
    return add(fill_masked(enc.mask, dec_embed(enc.latent), mask_token), dec_pos);
}

Var MaskedAutoencoder::decode(const Var& decoder_in) const { return head(decoder(decoder_in)); }

Var MaskedAutoencoder::reconstruct(const Var& patches, double mask_ratio, Rng& rng) const {
    return decode(decoder_input(encode(patches, mask_ratio, rng)));
}

void MaskedAutoencoder::collect(ParamSet& ps, const std::string& prefix) const {
    embed.collect(ps, prefix + "encoder.embed.");
    encoder.collect(ps, prefix + "encoder.");
    dec_embed.collect(ps, prefix + "decoder.embed.");
    ps.add(prefix + "decoder.mask_token", mask_token);
    ps.add(prefix + "decoder.pos", dec_pos);
    decoder.collect(ps, prefix + "decoder.");
    head.collect(ps, prefix + "decoder.head.");
}

ParamSet MaskedAutoencoder::params(const std::string& prefix) const {
    ParamSet ps;
    collect(ps, prefix);
    return ps;
}

}  // namespace neurodec

namespace neurodec {

nlohmann::json to_json(const MaeConfig& c) {
    return {{"num_patches", c.num_patches}, {"patch_dim", c.patch_dim}, {"dim", c.dim},
            {"heads", c.heads},             {"depth_enc", c.depth_enc}, {"dec_dim", c.dec_dim},
            {"dec_heads", c.dec_heads},     {"depth_dec", c.depth_dec}, {"mlp_ratio", c.mlp_ratio}};
}

MaeConfig mae_config_from_json(const nlohmann::json& j) {
    MaeConfig c;
    c.num_patches = j.at("num_patches");
    c.patch_dim = j.at("patch_dim");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.depth_enc = j.at("depth_enc");
    c.dec_dim = j.at("dec_dim");
    c.dec_heads = j.at("dec_heads");
    c.depth_dec = j.at("depth_dec");
    c.mlp_ratio = j.at("mlp_ratio");
    return c;
}

}  // namespace neurodec
