#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "neurodec/params.hpp"

namespace neurodec {

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-4;
    // Tensors larger than this are checked on a random coordinate sample.
    std::size_t max_coords = 24;
    // Denominator floor so coordinates with near-zero gradient are judged
    // on absolute error instead of an exploding ratio. Raised automatically
    // to the finite-difference rounding resolution divided by tol.
    double abs_floor = 1e-6;
    std::uint64_t seed = 0;
};

struct ParamGradReport {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<ParamGradReport> params;
    double max_rel_error = 0.0;
    bool passed = false;
    bool aborted = false;
    std::string diagnostic;
};

using LossFn = std::function<Var()>;

// Compares autodiff gradients of `loss_fn` to centered differences
// (f(p+h) - f(p-h)) / 2h, coordinate by coordinate.
GradCheckReport grad_check(const LossFn& loss_fn, const ParamSet& params, const GradCheckOptions& opts = {});

// Same comparison against caller-supplied analytic gradients (one per param).
GradCheckReport grad_check_against(const LossFn& loss_fn, const ParamSet& params,
                                   const std::vector<Tensor>& analytic, const GradCheckOptions& opts = {});

}  // namespace neurodec
