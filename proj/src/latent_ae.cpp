#include "neurodec/latent_ae.hpp"

#include <cmath>

#include "neurodec/errors.hpp"

namespace neurodec {

LatentAE::LatentAE(const LatentAeConfig& cfg, Rng& rng)
    : enc1(3, cfg.channels, 3, 2, 1, rng),
      enc2(cfg.channels, cfg.channels, 3, 2, 1, rng),
      enc3(cfg.channels, cfg.latent_channels, 3, 1, 1, rng),
      dec1(cfg.latent_channels, cfg.channels, 3, 1, 1, rng),
      dec2(cfg.channels, cfg.channels, 3, 1, 1, rng),
      dec3(cfg.channels, cfg.channels / 2, 3, 1, 1, rng),
      dec4(cfg.channels / 2, 3, 3, 1, 1, rng),
      image_size_(cfg.image_size),
      latent_channels_(cfg.latent_channels) {
    if (cfg.image_size % 4 != 0) throw ConfigError("latent ae: image size must be divisible by 4");
}

Var LatentAE::encode_raw(const Var& image) const {
    const std::size_t s = image_size_;
    Var h = silu(enc1(image, s, s));
    h = silu(enc2(h, s / 2, s / 2));
    return enc3(h, s / 4, s / 4);
}

Var LatentAE::decode_raw(const Var& latent) const {
    const std::size_t s = image_size_ / 4;
    Var h = silu(dec1(latent, s, s));
    h = silu(dec2(upsample2x(h, s, s), 2 * s, 2 * s));
    h = silu(dec3(upsample2x(h, 2 * s, 2 * s), 4 * s, 4 * s));
    return dec4(h, 4 * s, 4 * s);
}

Tensor LatentAE::encode(const Tensor& image) const {
    NoGradGuard ng;
    Tensor z = encode_raw(Var(image)).value();
    for (auto& v : z.values()) v *= latent_scale;
    return z;
}

Tensor LatentAE::decode(const Tensor& latent) const {
    NoGradGuard ng;
    return decode_raw(scale(Var(latent), 1.0 / latent_scale)).value();
}

void LatentAE::collect(ParamSet& ps, const std::string& prefix) const {
    enc1.collect(ps, prefix + "enc1.");
    enc2.collect(ps, prefix + "enc2.");
    enc3.collect(ps, prefix + "enc3.");
    dec1.collect(ps, prefix + "dec1.");
    dec2.collect(ps, prefix + "dec2.");
    dec3.collect(ps, prefix + "dec3.");
    dec4.collect(ps, prefix + "dec4.");
}

ParamSet LatentAE::params() const {
    ParamSet ps;
    collect(ps);
    return ps;
}

TrainLog train_latent_ae(LatentAE& ae, const std::vector<Tensor>& images, const LatentAeConfig& cfg) {
    AdamW opt(ae.params(), {cfg.schedule.lr, 0.9, 0.95, 1e-8, 0.0});
    TrainLog log = train_loop(images.size(), cfg.schedule, opt, {"mse"}, [&](const std::vector<std::size_t>& idx, Rng&) {
        opt.zero_grad();
        std::vector<Var> terms;
        double rec = 0;
        for (auto i : idx) {
            const Var x(images[i]);
            const Var z = ae.encode_raw(x);
            const Var r = mse(ae.decode_raw(z), x);
            rec += r.item();
            terms.push_back(reshape(add(r, scale(mean(square(z)), cfg.latent_penalty)), {1, 1}));
        }
        const Var loss = scale(sum(concat_cols(terms)), 1.0 / static_cast<double>(idx.size()));
        if (!std::isfinite(loss.item())) throw NumericalError("latent ae: non-finite loss");
        backward(loss);
        opt.step();
        return std::vector<double>{rec / static_cast<double>(idx.size())};
    });
    double sq = 0;
    std::size_t count = 0;
    {
        NoGradGuard ng;
        for (const auto& img : images) {
            const Tensor z = ae.encode_raw(Var(img)).value();
            for (double v : z.values()) sq += v * v;
            count += z.numel();
        }
    }
    ae.latent_scale = 1.0 / std::sqrt(sq / static_cast<double>(count) + 1e-12);
    return log;
}

}  // namespace neurodec
