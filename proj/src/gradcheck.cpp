#include "franca/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace franca {

std::string GradCheckResult::describe() const {
    std::ostringstream os;
    os.precision(6);
    os << "max_rel_error=" << max_rel_error << " over " << coordinates << " coordinates; worst at input "
       << worst_input << " index " << worst_index << " (analytic " << worst_analytic << ", numeric " << worst_numeric
       << ")";
    return os.str();
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> inputs, double h) {
    if (precision() != Precision::f64) throw std::logic_error("grad_check requires 64-bit precision");
    if (!(h > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

    std::vector<std::vector<double>> analytic;
    {
        for (auto& x : inputs) x.set_requires_grad(true);
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
        for (auto& x : inputs) {
            if (x.has_grad()) analytic.emplace_back(x.grad().begin(), x.grad().end());
            else analytic.emplace_back(x.size(), 0.0);
        }
    }

    std::vector<std::vector<double>> numeric(inputs.size());
    double scale = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto data = inputs[i].mutable_data();
        numeric[i].resize(data.size());
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double saved = data[j];
            data[j] = saved + h;
            const double up = f().item();
            data[j] = saved - h;
            const double down = f().item();
            data[j] = saved;
            numeric[i][j] = (up - down) / (2.0 * h);
            scale = std::max(scale, std::abs(numeric[i][j]));
        }
    }

    GradCheckResult result;
    const double floor = std::max(1e-3 * scale, 1e-12);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t j = 0; j < numeric[i].size(); ++j) {
            const double a = analytic[i][j], n = numeric[i][j];
            const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
            ++result.coordinates;
            if (result.coordinates == 1 || err > result.max_rel_error) {
                result.max_rel_error = err;
                result.worst_input = i;
                result.worst_index = j;
                result.worst_analytic = a;
                result.worst_numeric = n;
            }
        }
    }
    return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
    Tensor inputs[] = {x};
    return grad_check([&] { return f(inputs[0]); }, inputs, h);
}

}  // namespace franca
