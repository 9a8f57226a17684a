#include "neurodec/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "neurodec/errors.hpp"

namespace neurodec {

void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamWState& state,
                std::span<const bool> decay) {
    if (params.size() != grads.size()) throw ShapeError("adamw: parameter/gradient count mismatch");
    if (!decay.empty() && decay.size() != params.size()) throw ShapeError("adamw: decay mask size mismatch");
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->shape(), 0.0);
            state.v.emplace_back(p->shape(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adamw: state tracks a different parameter count");

    const auto& c = state.config;
    const std::size_t t = state.step + 1;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (p.shape() != g.shape() || p.shape() != m.shape()) {
            throw ShapeError("adamw: shape mismatch for parameter " + std::to_string(i) + ": " +
                             shape_str(p.shape()) + " vs grad " + shape_str(g.shape()));
        }
        const double wd = (decay.empty() || decay[i]) ? c.weight_decay : 0.0;
        for (std::size_t k = 0; k < p.numel(); ++k) {
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= c.lr * wd * p[k];
            p[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
        if (!p.all_finite()) throw NumericalError("adamw: parameter " + std::to_string(i) + " became non-finite");
    }
    state.step = t;
}

AdamW::AdamW(ParamSet params, AdamWConfig config) : params_(std::move(params)) {
    state_.config = config;
    decay_ = std::make_unique<bool[]>(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) decay_[i] = params_.items()[i].var.value().rank() >= 2;
}

void AdamW::step() {
    std::vector<Tensor*> ptrs;
    std::vector<Tensor> grads;
    ptrs.reserve(params_.size());
    grads.reserve(params_.size());
    for (const auto& p : params_.items()) {
        Var v = p.var;
        ptrs.push_back(&v.mutable_value());
        grads.push_back(v.grad());
    }
    adamw_step(ptrs, grads, state_, std::span<const bool>(decay_.get(), params_.size()));
}

double warmup_cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                        double base_lr, double min_lr) {
    if (warmup_steps > 0 && step < warmup_steps) {
        return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
    }
    if (total_steps <= warmup_steps) return base_lr;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    const double clamped = std::min(1.0, std::max(0.0, progress));
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * clamped));
}

}  // namespace neurodec
