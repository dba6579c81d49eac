#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "franca/gradcheck.hpp"

namespace franca {

struct GradSuiteEntry {
    std::string name;
    GradCheckResult result;
};

struct GradSuiteReport {
    std::vector<GradSuiteEntry> entries;
    double max_rel_error = 0.0;
    std::string worst;
    double seconds = 0.0;
};

// Finite-difference check of every differentiable op plus a 2-block encoder
// feeding a 2-level head bank, at 64-bit precision.
GradSuiteReport run_gradient_suite(std::uint64_t seed, double h = 1e-4);

}  // namespace franca
