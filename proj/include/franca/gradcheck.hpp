#pragma once

#include <functional>
#include <span>
#include <string>

#include "franca/tensor.hpp"

namespace franca {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;

    std::string describe() const;
};

// Compares tape gradients of the scalar program `f` with respect to `inputs`
// against central differences (f(x+h e) - f(x-h e)) / 2h, one coordinate at a
// time. The relative error of a coordinate is |a - n| / max(|a|, |n|, 1e-3 * s)
// where s is the largest numeric gradient magnitude seen, so coordinates that
// are zero up to finite-difference noise do not dominate. Requires
// Precision::f64 on the calling thread.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h = 1e-4);
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-4);

}  // namespace franca
