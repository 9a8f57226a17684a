#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "neurodec/autograd.hpp"

namespace neurodec {

struct NamedParam {
    std::string name;
    Var var;
};

// Ordered, named view over model parameters. Holds handles, so editing a
// parameter through the set edits the model.
class ParamSet {
public:
    void add(std::string name, Var var);
    void append(const ParamSet& other, std::string_view prefix = {});

    const std::vector<NamedParam>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t scalar_count() const;

    const Var* find(std::string_view name) const;
    ParamSet filter(const std::function<bool(const NamedParam&)>& keep) const;
    ParamSet with_prefix(std::string_view prefix) const;

    void zero_grad() const;
    void set_requires_grad(bool on) const;
    std::vector<Var> vars() const;
    // Deep copy of current values, in order.
    std::vector<Tensor> snapshot() const;

private:
    std::vector<NamedParam> items_;
};

// Turns off gradient tracking for a parameter set for the guard's lifetime.
// Gradients still flow through frozen parameters to whatever feeds them.
class FreezeGuard {
public:
    explicit FreezeGuard(ParamSet frozen) : frozen_(std::move(frozen)) { frozen_.set_requires_grad(false); }
    ~FreezeGuard() { frozen_.set_requires_grad(true); }
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    ParamSet frozen_;
};

}  // namespace neurodec
