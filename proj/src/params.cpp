#include "neurodec/params.hpp"

#include "neurodec/errors.hpp"

namespace neurodec {

void ParamSet::add(std::string name, Var var) {
    if (find(name)) throw ContractError("ParamSet: duplicate parameter name '" + name + "'");
    items_.push_back({std::move(name), std::move(var)});
}

void ParamSet::append(const ParamSet& other, std::string_view prefix) {
    for (const auto& p : other.items_) add(std::string(prefix) + p.name, p.var);
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.var.numel();
    return n;
}

const Var* ParamSet::find(std::string_view name) const {
    for (const auto& p : items_)
        if (p.name == name) return &p.var;
    return nullptr;
}

ParamSet ParamSet::filter(const std::function<bool(const NamedParam&)>& keep) const {
    ParamSet out;
    for (const auto& p : items_)
        if (keep(p)) out.items_.push_back(p);
    return out;
}

ParamSet ParamSet::with_prefix(std::string_view prefix) const {
    return filter([prefix](const NamedParam& p) { return p.name.starts_with(prefix); });
}

void ParamSet::zero_grad() const {
    for (const auto& p : items_) {
        Var v = p.var;
        v.zero_grad();
    }
}

void ParamSet::set_requires_grad(bool on) const {
    for (const auto& p : items_) {
        Var v = p.var;
        v.set_requires_grad(on);
    }
}

std::vector<Var> ParamSet::vars() const {
    std::vector<Var> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.var);
    return out;
}

std::vector<Tensor> ParamSet::snapshot() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.var.value());
    return out;
}

}  // namespace neurodec
