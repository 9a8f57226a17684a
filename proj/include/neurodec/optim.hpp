#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "neurodec/params.hpp"

namespace neurodec {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

struct AdamWState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
    AdamWConfig config;
};

// One AdamW update over parallel arrays. Weight decay is decoupled: it
// shrinks the parameter directly and never enters the moment estimates.
// `decay[i] == false` exempts parameter i from decay (biases, norms).
void adamw_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamWState& state,
                std::span<const bool> decay = {});

// Optimizer bound to a parameter set. Parameters of rank < 2 are not decayed.
class AdamW {
public:
    AdamW(ParamSet params, AdamWConfig config);

    void set_lr(double lr) { state_.config.lr = lr; }
    double lr() const { return state_.config.lr; }
    void step();
    void zero_grad() const { params_.zero_grad(); }

    const ParamSet& params() const { return params_; }
    const AdamWState& state() const { return state_; }
    AdamWState& state() { return state_; }

private:
    ParamSet params_;
    AdamWState state_;
    // Contiguous bools so they can be viewed as a span.
    std::unique_ptr<bool[]> decay_;
};

// Linear warmup followed by cosine decay to `min_lr`.
double warmup_cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps,
                        double base_lr, double min_lr = 0.0);

}  // namespace neurodec
