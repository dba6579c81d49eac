#pragma once

#include <map>
#include <string>
#include <vector>

#include "franca/tensor.hpp"

namespace franca {

using GradStore = std::map<std::string, std::vector<double>>;

// Named parameter tensors, iterated in name order.
class ParamStore {
public:
    using Map = std::map<std::string, Tensor>;

    Tensor& add(const std::string& name, Tensor tensor);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    Map::const_iterator begin() const { return params_.begin(); }
    Map::const_iterator end() const { return params_.end(); }
    Map::iterator begin() { return params_.begin(); }
    Map::iterator end() { return params_.end(); }

    // Per-worker views sharing storage; each view owns its gradient slot.
    ParamStore views() const;
    ParamStore clone() const;
    void set_requires_grad(bool on);

    // Gradients after backward; zero-filled for parameters without one.
    GradStore grads() const;

private:
    Map params_;
};

void accumulate(GradStore& into, const GradStore& from);

}  // namespace franca
