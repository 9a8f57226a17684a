#pragma once

// Named gradient-check cases: every differentiable op plus the composite
// training losses on tiny models. Shared by the CLI and the test suites.

#include <string>
#include <vector>

#include "neurodec/gradcheck.hpp"

namespace neurodec {

struct GradCase {
    std::string name;
    double tol = 1e-4;  // 1e-6 for linear ops
    ParamSet params;
    LossFn loss;        // deterministic scalar
};

std::vector<GradCase> op_grad_cases(std::uint64_t seed = 1);
std::vector<GradCase> loss_grad_cases(std::uint64_t seed = 1);

}  // namespace neurodec
