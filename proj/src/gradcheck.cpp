#include "neurodec/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "neurodec/errors.hpp"
#include "neurodec/rng.hpp"

namespace neurodec {

namespace {

double eval(const LossFn& fn) {
    NoGradGuard guard;
    Var loss = fn();
    if (loss.numel() != 1) throw ContractError("grad_check: loss must be scalar");
    return loss.item();
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss_fn, const ParamSet& params, const GradCheckOptions& opts) {
    params.zero_grad();
    Var loss = loss_fn();
    backward(loss);
    std::vector<Tensor> analytic;
    for (const auto& p : params.items()) analytic.push_back(p.var.grad());
    params.zero_grad();
    return grad_check_against(loss_fn, params, analytic, opts);
}

GradCheckReport grad_check_against(const LossFn& loss_fn, const ParamSet& params,
                                   const std::vector<Tensor>& analytic, const GradCheckOptions& opts) {
    GradCheckReport report;
    if (analytic.size() != params.size()) throw ContractError("grad_check: one gradient per parameter required");

    const double f0 = eval(loss_fn);
    const double f1 = eval(loss_fn);
    if (std::bit_cast<std::uint64_t>(f0) != std::bit_cast<std::uint64_t>(f1)) {
        std::ostringstream os;
        os.precision(17);
        os << "loss function is not deterministic: " << f0 << " then " << f1;
        report.aborted = true;
        report.diagnostic = os.str();
        return report;
    }

    // Differences below the rounding resolution of the centered quotient
    // carry no signal; judge those coordinates on absolute error.
    const double resolution = 16.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(f0), 1.0) / opts.h;
    const double floor = std::max(opts.abs_floor, resolution / opts.tol);

    Rng rng(opts.seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto& np = params.items()[pi];
        Var var = np.var;
        Tensor& value = var.mutable_value();
        std::vector<std::size_t> coords;
        if (value.numel() <= opts.max_coords) {
            coords.resize(value.numel());
            std::iota(coords.begin(), coords.end(), std::size_t{0});
        } else {
            coords = rng.choose(value.numel(), opts.max_coords);
        }
        ParamGradReport pr{np.name, 0.0, coords.size()};
        for (std::size_t c : coords) {
            const double orig = value[c];
            value[c] = orig + opts.h;
            const double fp = eval(loss_fn);
            value[c] = orig - opts.h;
            const double fm = eval(loss_fn);
            value[c] = orig;
            const double numeric = (fp - fm) / (2.0 * opts.h);
            const double a = analytic[pi][c];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            pr.max_rel_error = std::max(pr.max_rel_error, std::abs(a - numeric) / denom);
        }
        report.max_rel_error = std::max(report.max_rel_error, pr.max_rel_error);
        report.params.push_back(std::move(pr));
    }
    report.passed = report.max_rel_error <= opts.tol;
    if (!report.passed) {
        std::ostringstream os;
        os << "max relative error " << report.max_rel_error << " exceeds " << opts.tol;
        report.diagnostic = os.str();
    }
    return report;
}

}  // namespace neurodec
