#pragma once

#include <vector>

#include "franca/tensor.hpp"

namespace franca {

struct SKConfig {
    std::size_t iterations = 3;
    double temperature = 0.05;  // teacher temperature
    double floor = 1e-30;       // lower clamp on every entry before a normalization

    void validate() const;
};

// Balanced soft assignments for logits [B, K]. Q starts as the row-wise
// softmax of logits / temperature, then each round rescales columns to sum
// B/K and rows to sum 1. The result is a constant (never on a tape).
Tensor sk_targets(const Tensor& logits, const SKConfig& cfg);

// Same computation on a raw row-major buffer. When `column_deviation` is
// given it receives max_j |colsum_j - B/K| after every round.
std::vector<double> sinkhorn(std::span<const double> logits, std::size_t rows, std::size_t cols,
                             const SKConfig& cfg, std::vector<double>* column_deviation = nullptr);

}  // namespace franca
