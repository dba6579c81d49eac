#pragma once

#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "franca/random.hpp"
#include "franca/tensor.hpp"

namespace testutil {

inline franca::Tensor random_tensor(franca::Shape shape, franca::Rng& rng, bool grad = false, double scale = 1.0) {
    std::vector<double> v(franca::numel(shape));
    for (auto& x : v) x = rng.normal() * scale;
    return franca::Tensor(std::move(shape), std::move(v), grad);
}

inline void check_close(std::span<const double> a, std::span<const double> b, double tol) {
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace testutil
