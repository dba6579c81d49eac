#include "franca/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace franca {

void SKConfig::validate() const {
    if (iterations == 0) throw std::invalid_argument("sinkhorn: iterations must be at least 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("sinkhorn: temperature must be positive");
    if (!(floor >= 0.0)) throw std::invalid_argument("sinkhorn: floor must be non-negative");
}

std::vector<double> sinkhorn(std::span<const double> logits, std::size_t rows, std::size_t cols,
                             const SKConfig& cfg, std::vector<double>* column_deviation) {
    cfg.validate();
    if (rows == 0 || cols < 2) throw std::invalid_argument("sinkhorn: need B >= 1 rows and K >= 2 columns");
    if (logits.size() != rows * cols) throw ShapeError("sinkhorn: buffer size does not match rows x cols");
    for (double v : logits)
        if (!std::isfinite(v)) throw std::invalid_argument("sinkhorn: non-finite logit");

    std::vector<double> q(rows * cols);
    auto normalize_rows = [&] {
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < cols; ++c) s += q[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) q[r * cols + c] = std::max(q[r * cols + c] / s, cfg.floor);
        }
    };
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = logits.data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        for (std::size_t c = 0; c < cols; ++c)
            q[r * cols + c] = std::max(std::exp((row[c] - mx) / cfg.temperature), cfg.floor);
    }
    normalize_rows();

    const double target = static_cast<double>(rows) / static_cast<double>(cols);
    std::vector<double> colsum(cols);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        std::fill(colsum.begin(), colsum.end(), 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) colsum[c] += q[r * cols + c];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                q[r * cols + c] = std::max(q[r * cols + c] * target / colsum[c], cfg.floor);
        normalize_rows();
        if (column_deviation) {
            std::fill(colsum.begin(), colsum.end(), 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c) colsum[c] += q[r * cols + c];
            double dev = 0.0;
            for (double s : colsum) dev = std::max(dev, std::abs(s - target));
            column_deviation->push_back(dev);
        }
    }
    return q;
}

Tensor sk_targets(const Tensor& logits, const SKConfig& cfg) {
    if (logits.ndim() != 2) throw ShapeError("sk_targets: expected [B, K], got " + shape_str(logits.shape()));
    auto q = sinkhorn(logits.data(), logits.dim(0), logits.dim(1), cfg);
    round_to_precision(q);
    return Tensor(logits.shape(), std::move(q));
}

}  // namespace franca
