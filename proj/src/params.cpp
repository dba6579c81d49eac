#include "franca/params.hpp"

#include <stdexcept>

namespace franca {

Tensor& ParamStore::add(const std::string& name, Tensor tensor) {
    auto [it, inserted] = params_.emplace(name, std::move(tensor));
    if (!inserted) throw std::invalid_argument("duplicate parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
}

ParamStore ParamStore::views() const {
    ParamStore out;
    for (const auto& [name, t] : params_) out.params_.emplace(name, t.view());
    return out;
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& [name, t] : params_) out.params_.emplace(name, t.clone());
    return out;
}

void ParamStore::set_requires_grad(bool on) {
    for (auto& [_, t] : params_) t.set_requires_grad(on);
}

GradStore ParamStore::grads() const {
    GradStore g;
    for (const auto& [name, t] : params_) {
        if (t.has_grad()) g.emplace(name, std::vector<double>(t.grad().begin(), t.grad().end()));
        else g.emplace(name, std::vector<double>(t.size(), 0.0));
    }
    return g;
}

void accumulate(GradStore& into, const GradStore& from) {
    for (const auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end()) {
            into.emplace(name, g);
            continue;
        }
        if (it->second.size() != g.size()) throw std::invalid_argument("gradient size mismatch for '" + name + "'");
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
}

}  // namespace franca
