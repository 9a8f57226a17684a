#include "neurodec/diffusion.hpp"

#include <cmath>

#include "neurodec/errors.hpp"

namespace neurodec {

NoiseSchedule NoiseSchedule::linear(std::size_t T, double beta_start, double beta_end) {
    if (T == 0) throw ConfigError("noise schedule: T must be >= 1");
    NoiseSchedule s;
    s.T = T;
    double ab = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
        const double b = T == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        ab *= 1.0 - b;
        s.alpha_bar.push_back(ab);
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (beta.size() != T || alpha.size() != T || alpha_bar.size() != T) throw ConfigError("noise schedule: length mismatch");
    for (std::size_t t = 0; t < T; ++t) {
        if (!(beta[t] > 0.0 && beta[t] < 1.0)) throw ConfigError("noise schedule: beta outside (0, 1)");
        if (t > 0 && !(beta[t] > beta[t - 1])) throw ConfigError("noise schedule: beta not strictly increasing");
        if (t > 0 && !(alpha_bar[t] < alpha_bar[t - 1])) throw ConfigError("noise schedule: alpha_bar not decreasing");
    }
}

Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
    if (t >= s.T) throw ContractError("q_sample: t=" + std::to_string(t) + " outside [0, " + std::to_string(s.T) + ")");
    if (z0.shape() != eps.shape()) throw ShapeError("q_sample: z0 " + shape_str(z0.shape()) + " vs eps " + shape_str(eps.shape()));
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

// ----------------------------------------------------------------- blocks

ResBlock::ResBlock(std::size_t in, std::size_t out, std::size_t time_dim, Rng& rng)
    : norm1(in),
      norm2(out),
      conv1(in, out, 3, 1, 1, rng),
      conv2(out, out, 3, 1, 1, rng),
      time_proj(time_dim, out, rng),
      has_skip(in != out) {
    if (has_skip) skip = nn::Conv2d(in, out, 1, 1, 0, rng);
}

Var ResBlock::operator()(const Var& x, const Var& temb, std::size_t h, std::size_t w) const {
    Var y = conv1(silu(norm1(x)), h, w);
    y = add_row(y, time_proj(silu(temb)));
    y = conv2(silu(norm2(y)), h, w);
    return add(has_skip ? skip(x, h, w) : x, y);
}

void ResBlock::collect(ParamSet& ps, const std::string& prefix) const {
    norm1.collect(ps, prefix + "norm1.");
    conv1.collect(ps, prefix + "conv1.");
    time_proj.collect(ps, prefix + "time_proj.");
    norm2.collect(ps, prefix + "norm2.");
    conv2.collect(ps, prefix + "conv2.");
    if (has_skip) skip.collect(ps, prefix + "skip.");
}

CrossAttnBlock::CrossAttnBlock(std::size_t channels, std::size_t cond_width, std::size_t heads, Rng& rng)
    : norm(channels), attn(channels, cond_width, channels, heads, rng) {}

Var CrossAttnBlock::operator()(const Var& x, const Var& cond) const { return add(x, attn(norm(x), cond)); }

void CrossAttnBlock::collect(ParamSet& ps, const std::string& prefix) const {
    norm.collect(ps, prefix + "norm.");
    attn.collect(ps, prefix + "attn.");
}

CondDenoiser::CondDenoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.latent_size % 2 != 0) throw ConfigError("denoiser: latent size must be even");
    const std::size_t c = cfg.channels;
    time = nn::TimeEmbedding(cfg.sin_dim, cfg.time_dim, cfg.T, rng);
    cond_proj = nn::Linear(cfg.cond_tokens ? cfg.cond_tokens * cfg.cond_width : cfg.cond_width, cfg.time_dim, rng);
    conv_in = nn::Conv2d(cfg.latent_channels, c, 3, 1, 1, rng);
    res1 = ResBlock(c, c, cfg.time_dim, rng);
    ca1 = CrossAttnBlock(c, cfg.cond_width, cfg.ca_heads, rng);
    down = nn::Conv2d(c, 2 * c, 3, 2, 1, rng);
    res2 = ResBlock(2 * c, 2 * c, cfg.time_dim, rng);
    ca2 = CrossAttnBlock(2 * c, cfg.cond_width, cfg.ca_heads, rng);
    mid = ResBlock(2 * c, 2 * c, cfg.time_dim, rng);
    up = nn::Conv2d(2 * c, c, 3, 1, 1, rng);
    res3 = ResBlock(2 * c, c, cfg.time_dim, rng);
    ca3 = CrossAttnBlock(c, cfg.cond_width, cfg.ca_heads, rng);
    conv_out = nn::Conv2d(c, cfg.latent_channels, 3, 1, 1, rng);
    for (auto& v : conv_out.weight.mutable_value().values()) v *= 0.1;
}

Var CondDenoiser::operator()(const Var& z_t, std::size_t t, const Var& cond) const {
    const std::size_t s = cfg_.latent_size, h = s / 2;
    if (z_t.value().rank() != 2 || z_t.value().rows() != s * s || z_t.value().cols() != cfg_.latent_channels) {
        throw ShapeError("denoiser: latent " + shape_str(z_t.shape()) + ", expected [" + std::to_string(s * s) + "x" +
                         std::to_string(cfg_.latent_channels) + "]");
    }
    if (cond.value().rank() != 2 || cond.value().cols() != cfg_.cond_width) {
        throw ShapeError("denoiser: condition " + shape_str(cond.shape()) + " does not match projection width " +
                         std::to_string(cfg_.cond_width));
    }
    if (cfg_.cond_tokens && cond.value().rows() != cfg_.cond_tokens) {
        throw ShapeError("denoiser: condition has " + std::to_string(cond.value().rows()) + " tokens, expected " +
                         std::to_string(cfg_.cond_tokens));
    }
    const Var pooled = cfg_.cond_tokens ? reshape(cond, Shape{1, cfg_.cond_tokens * cfg_.cond_width}) : mean_rows(cond);
    const Var temb = add(time(t), cond_proj(pooled));
    Var x = ca1(res1(conv_in(z_t, s, s), temb, s, s), cond);
    Var d = ca2(res2(down(x, s, s), temb, h, h), cond);
    d = mid(d, temb, h, h);
    const Var parts[] = {up(upsample2x(d, h, h), s, s), x};
    Var u = ca3(res3(concat_cols(parts), temb, s, s), cond);
    return conv_out(silu(u), s, s);
}

void CondDenoiser::collect(ParamSet& ps, const std::string& prefix) const {
    time.collect(ps, prefix + "time.");
    cond_proj.collect(ps, prefix + "cond.proj.");
    conv_in.collect(ps, prefix + "conv_in.");
    res1.collect(ps, prefix + "res1.");
    ca1.collect(ps, prefix + "ca.1.");
    down.collect(ps, prefix + "down.");
    res2.collect(ps, prefix + "res2.");
    ca2.collect(ps, prefix + "ca.2.");
    mid.collect(ps, prefix + "mid.");
    up.collect(ps, prefix + "up.");
    res3.collect(ps, prefix + "res3.");
    ca3.collect(ps, prefix + "ca.3.");
    conv_out.collect(ps, prefix + "conv_out.");
}

ParamSet CondDenoiser::params() const {
    ParamSet ps;
    collect(ps);
    return ps;
}

namespace {

bool is_conditioning(const std::string& name) { return name.rfind("ca.", 0) == 0 || name.rfind("cond.", 0) == 0; }

}  // namespace

ParamSet CondDenoiser::conditioning_params() const {
    return params().filter([](const NamedParam& p) { return is_conditioning(p.name); });
}

ParamSet CondDenoiser::backbone_params() const {
    return params().filter([](const NamedParam& p) { return !is_conditioning(p.name); });
}

ClassEmbedding::ClassEmbedding(std::size_t n_classes, std::size_t tokens_, std::size_t width, Rng& rng)
    : tokens(tokens_), table(rng.normal_tensor({n_classes * tokens_, width}), true) {}

Var ClassEmbedding::operator()(std::size_t label) const {
    if ((label + 1) * tokens > table.shape()[0]) throw ContractError("class embedding: label out of range");
    std::vector<std::size_t> rows(tokens);
    for (std::size_t i = 0; i < tokens; ++i) rows[i] = label * tokens + i;
    return gather_rows(table, rows);
}

void ClassEmbedding::collect(ParamSet& ps, const std::string& prefix) const { ps.add(prefix + "table", table); }

// --------------------------------------------------------------- training

Var denoise_loss(const CondDenoiser& model, const Tensor& z0, std::size_t t, const Tensor& eps, const Var& cond,
                 const NoiseSchedule& s) {
    return mse(model(Var(q_sample(z0, t, eps, s)), t, cond), Var(eps));
}

double diffusion_step(const CondDenoiser& model, AdamW& opt, const std::vector<Tensor>& latents,
                      const std::vector<std::size_t>& batch, const CondFn& cond, const NoiseSchedule& s, Rng& rng) {
    opt.zero_grad();
    std::vector<Var> terms;
    for (auto i : batch) {
        const std::size_t t = rng.index(s.T);
        const Tensor eps = rng.normal_tensor(latents[i].shape());
        terms.push_back(reshape(denoise_loss(model, latents[i], t, eps, cond(i), s), {1, 1}));
    }
    const Var loss = scale(sum(concat_cols(terms)), 1.0 / static_cast<double>(batch.size()));
    if (!std::isfinite(loss.item())) throw NumericalError("diffusion: non-finite loss " + std::to_string(loss.item()));
    backward(loss);
    opt.step();
    return loss.item();
}

TrainLog pretrain_ldm(const CondDenoiser& model, const ClassEmbedding& classes, const std::vector<Tensor>& latents,
                      const std::vector<std::size_t>& labels, const NoiseSchedule& s, const DiffusionTrainConfig& cfg,
                      const std::function<void(const std::vector<double>&)>& on_step) {
    if (latents.size() != labels.size()) throw ShapeError("pretrain-ldm: latents and labels differ in count");
    ParamSet ps = model.params();
    classes.collect(ps, "class_embed.");
    AdamW opt(ps, {cfg.schedule.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    return train_loop(
        latents.size(), cfg.schedule, opt, {"loss"},
        [&](const std::vector<std::size_t>& idx, Rng& rng) {
            return std::vector<double>{
                diffusion_step(model, opt, latents, idx, [&](std::size_t i) { return classes(labels[i]); }, s, rng)};
        },
        on_step);
}

TrainLog finetune_ldm(const CondDenoiser& model, const ParamSet& trainable, const std::vector<Tensor>& latents,
                      const CondFn& cond, const NoiseSchedule& s, const DiffusionTrainConfig& cfg,
                      const std::function<void(const std::vector<double>&)>& on_step) {
    AdamW opt(trainable, {cfg.schedule.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    const FreezeGuard freeze(model.backbone_params());
    return train_loop(
        latents.size(), cfg.schedule, opt, {"loss"},
        [&](const std::vector<std::size_t>& idx, Rng& rng) {
            return std::vector<double>{diffusion_step(model, opt, latents, idx, cond, s, rng)};
        },
        on_step);
}

// ---------------------------------------------------------------- sampling

EpsFn make_eps_fn(const CondDenoiser& model, const Tensor& cond) {
    return [&model, cond](const Tensor& z, std::size_t t) {
        NoGradGuard ng;
        return model(Var(z), t, Var(cond)).value();
    };
}

std::vector<std::size_t> sampling_timesteps(std::size_t T, std::size_t steps) {
    if (steps == 0 || steps > T) {
        throw ContractError("sampler: steps=" + std::to_string(steps) + " must be in [1, T=" + std::to_string(T) + "]");
    }
    std::vector<std::size_t> ts(steps);
    for (std::size_t i = 0; i < steps; ++i) ts[steps - 1 - i] = i * T / steps;
    return ts;
}

namespace {

// Deterministic update from t to prev (abar_prev = 1 means the clean sample).
Tensor ddim_update(const Tensor& z, const Tensor& e, double ab, double ab_prev) {
    const double sa = std::sqrt(ab), s1 = std::sqrt(1.0 - ab);
    const double sp = std::sqrt(ab_prev), sp1 = std::sqrt(1.0 - ab_prev);
    Tensor out(z.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) out[i] = sp * (z[i] - s1 * e[i]) / sa + sp1 * e[i];
    return out;
}

}  // namespace

Tensor ddpm_sample(const EpsFn& eps, const NoiseSchedule& s, std::size_t steps, const Tensor& z_T, Rng& rng) {
    const auto ts = sampling_timesteps(s.T, steps);
    Tensor z = z_T;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const bool last = k + 1 == ts.size();
        const double ab = s.alpha_bar[ts[k]];
        const double ab_prev = last ? 1.0 : s.alpha_bar[ts[k + 1]];
        const Tensor e = eps(z, ts[k]);
        const double beta = 1.0 - ab / ab_prev;
        const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
        const double sigma = last ? 0.0 : std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        Tensor next(z.shape());
        for (std::size_t i = 0; i < z.numel(); ++i) {
            const double x0 = (z[i] - std::sqrt(1.0 - ab) * e[i]) / std::sqrt(ab);
            next[i] = c0 * x0 + ct * z[i];
        }
        if (!last)
            for (auto& v : next.values()) v += sigma * rng.normal();
        z = std::move(next);
    }
    return z;
}

Tensor plms_sample(const EpsFn& eps, const NoiseSchedule& s, std::size_t steps, const Tensor& z_T) {
    const auto ts = sampling_timesteps(s.T, steps);
    Tensor z = z_T;
    std::vector<Tensor> history;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const bool last = k + 1 == ts.size();
        const double ab = s.alpha_bar[ts[k]];
        const double ab_prev = last ? 1.0 : s.alpha_bar[ts[k + 1]];
        const Tensor e = eps(z, ts[k]);
        Tensor e_prime(e.shape());
        const std::size_t n = history.size();
        if (n == 0) {
            if (last) {
                e_prime = e;
            } else {
                // improved Euler start: average with the slope at the predicted next point
                const Tensor e_next = eps(ddim_update(z, e, ab, ab_prev), ts[k + 1]);
                for (std::size_t i = 0; i < e.numel(); ++i) e_prime[i] = 0.5 * (e[i] + e_next[i]);
            }
        } else {
            for (std::size_t i = 0; i < e.numel(); ++i) {
                const double e1 = history[n - 1][i];
                if (n == 1) {
                    e_prime[i] = (3 * e[i] - e1) / 2;
                } else if (n == 2) {
                    e_prime[i] = (23 * e[i] - 16 * e1 + 5 * history[n - 2][i]) / 12;
                } else {
                    e_prime[i] = (55 * e[i] - 59 * e1 + 37 * history[n - 2][i] - 9 * history[n - 3][i]) / 24;
                }
            }
        }
        z = ddim_update(z, e_prime, ab, ab_prev);
        history.push_back(e);
        if (history.size() > 3) history.erase(history.begin());
    }
    return z;
}

std::pair<double, double> conditioning_gap(const CondDenoiser& model, const std::vector<Tensor>& latents,
                                           const std::vector<Tensor>& conds, const NoiseSchedule& s,
                                           std::size_t draws, std::uint64_t seed) {
    const std::size_t n = latents.size();
    if (n < 2 || conds.size() != n) throw ContractError("conditioning_gap: need >= 2 paired samples");
    const Rng root(seed);
    Rng perm_rng = root.derive(0);
    const auto p = perm_rng.permutation(n);
    std::vector<std::size_t> other(n);
    for (std::size_t k = 0; k < n; ++k) other[p[k]] = p[(k + 1) % n];
    NoGradGuard ng;
    double matched = 0, shuffled = 0;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = root.derive(1 + i);
        for (std::size_t d = 0; d < draws; ++d) {
            const std::size_t t = rng.index(s.T);
            const Tensor eps = rng.normal_tensor(latents[i].shape());
            matched += denoise_loss(model, latents[i], t, eps, Var(conds[i]), s).item();
            shuffled += denoise_loss(model, latents[i], t, eps, Var(conds[other[i]]), s).item();
        }
    }
    const double m = static_cast<double>(n * draws);
    return {matched / m, shuffled / m};
}

}  // namespace neurodec
