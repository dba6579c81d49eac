#include "franca/masking.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace franca {

namespace {

void check_args(std::size_t rows, std::size_t cols, double ratio) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("mask grid must have at least one cell");
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("mask ratio must lie in [0, 1]");
}

}  // namespace

MaskGrid::MaskGrid(std::size_t rows, std::size_t cols, bool value)
    : rows_(rows), cols_(cols), bits_(rows * cols, value ? 1 : 0) {}

std::size_t MaskGrid::masked_count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double MaskGrid::mask_ratio() const {
    return bits_.empty() ? 0.0 : static_cast<double>(masked_count()) / static_cast<double>(bits_.size());
}

MaskStrategy parse_mask_strategy(std::string_view name) {
    if (name == "random") return MaskStrategy::random;
    if (name == "block") return MaskStrategy::block;
    if (name == "inverse_block" || name == "inverse-block") return MaskStrategy::inverse_block;
    if (name == "cyclic") return MaskStrategy::cyclic;
    throw std::invalid_argument("unknown mask strategy '" + std::string(name) + "'");
}

std::string to_string(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::random: return "random";
        case MaskStrategy::block: return "block";
        case MaskStrategy::inverse_block: return "inverse_block";
        case MaskStrategy::cyclic: return "cyclic";
    }
    return "?";
}

Rect nearest_rectangle(std::size_t rows, std::size_t cols, double area) {
    if (area <= 0.0) return {};
    Rect best{1, 1};
    double best_err = std::abs(1.0 - area);
    for (std::size_t h = 1; h <= rows; ++h) {
        for (std::size_t w = 1; w <= cols; ++w) {
            const double err = std::abs(static_cast<double>(h * w) - area);
            const auto skew = [](std::size_t a, std::size_t b) { return a > b ? a - b : b - a; };
            bool better = err < best_err - 1e-12;
            if (!better && std::abs(err - best_err) <= 1e-12) {
                const std::size_t s_new = skew(h, w), s_old = skew(best.height, best.width);
                better = s_new < s_old || (s_new == s_old && w > h && best.width <= best.height);
            }
            if (better) {
                best = {h, w};
                best_err = err;
            }
        }
    }
    return best;
}

MaskGrid random_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng) {
    check_args(rows, cols, ratio);
    const std::size_t n = rows * cols;
    const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    MaskGrid mask(rows, cols);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(order[i], order[j]);
        mask.set(order[i] / cols, order[i] % cols, true);
    }
    return mask;
}

MaskGrid block_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng) {
    check_args(rows, cols, ratio);
    const Rect rect = nearest_rectangle(rows, cols, ratio * static_cast<double>(rows * cols));
    MaskGrid mask(rows, cols);
    if (rect.height == 0) return mask;
    const std::size_t top = static_cast<std::size_t>(rng.below(rows - rect.height + 1));
    const std::size_t left = static_cast<std::size_t>(rng.below(cols - rect.width + 1));
    for (std::size_t r = top; r < top + rect.height; ++r)
        for (std::size_t c = left; c < left + rect.width; ++c) mask.set(r, c, true);
    return mask;
}

MaskGrid inverse_block_mask(std::size_t rows, std::size_t cols, double ratio) {
    check_args(rows, cols, ratio);
    const Rect rect = nearest_rectangle(rows, cols, (1.0 - ratio) * static_cast<double>(rows * cols));
    MaskGrid mask(rows, cols, true);
    const std::size_t top = (rows - rect.height) / 2;
    const std::size_t left = (cols - rect.width) / 2;
    for (std::size_t r = top; r < top + rect.height; ++r)
        for (std::size_t c = left; c < left + rect.width; ++c) mask.set(r, c, false);
    return mask;
}

MaskGrid inverse_block_mask(std::size_t rows, std::size_t cols, double ratio, Rng&) {
    return inverse_block_mask(rows, cols, ratio);
}

MaskGrid cyclic_shift(const MaskGrid& mask, std::size_t dr, std::size_t dc) {
    MaskGrid out(mask.rows(), mask.cols());
    for (std::size_t r = 0; r < mask.rows(); ++r)
        for (std::size_t c = 0; c < mask.cols(); ++c)
            out.set((r + dr) % mask.rows(), (c + dc) % mask.cols(), mask.at(r, c));
    return out;
}

MaskGrid cyclic_mask(std::size_t rows, std::size_t cols, double ratio, Rng& rng) {
    const MaskGrid base = inverse_block_mask(rows, cols, ratio);
    const auto dr = static_cast<std::size_t>(rng.below(rows));
    const auto dc = static_cast<std::size_t>(rng.below(cols));
    return cyclic_shift(base, dr, dc);
}

MaskGrid make_mask(MaskStrategy strategy, std::size_t rows, std::size_t cols, double ratio, Rng& rng) {
    switch (strategy) {
        case MaskStrategy::random: return random_mask(rows, cols, ratio, rng);
        case MaskStrategy::block: return block_mask(rows, cols, ratio, rng);
        case MaskStrategy::inverse_block: return inverse_block_mask(rows, cols, ratio, rng);
        case MaskStrategy::cyclic: return cyclic_mask(rows, cols, ratio, rng);
    }
    throw std::invalid_argument("unknown mask strategy");
}

void CoverageStats::write_csv(std::ostream& os) const {
    os << "row,col,visible_freq\n";
    char buf[64];
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g\n", r, c, at(r, c));
            os << buf;
        }
    }
}

CoverageStats coverage_stats(MaskStrategy strategy, std::size_t rows, std::size_t cols, double ratio,
                             std::size_t samples, Rng& rng) {
    check_args(rows, cols, ratio);
    if (samples == 0) throw std::invalid_argument("coverage_stats: samples must be at least 1");
    std::vector<std::size_t> visible(rows * cols, 0);
    for (std::size_t s = 0; s < samples; ++s) {
        const MaskGrid m = make_mask(strategy, rows, cols, ratio, rng);
        for (std::size_t i = 0; i < visible.size(); ++i) visible[i] += m.bits()[i] ? 0 : 1;
    }
    CoverageStats stats;
    stats.rows = rows;
    stats.cols = cols;
    stats.samples = samples;
    stats.visible_freq.resize(visible.size());
    for (std::size_t i = 0; i < visible.size(); ++i) {
        stats.visible_freq[i] = static_cast<double>(visible[i]) / static_cast<double>(samples);
        stats.max_deviation = std::max(stats.max_deviation, std::abs(stats.visible_freq[i] - (1.0 - ratio)));
    }
    return stats;
}

}  // namespace franca
