#include "franca/hungarian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace franca {

namespace {

// Shortest augmenting paths with potentials; requires n <= m. Returns, for
// each row, its column.
std::vector<int> solve(std::span<const double> a, std::size_t n, std::size_t m) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
    return row_to_col;
}

}  // namespace

Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("hungarian: empty cost matrix");
    if (cost.size() != rows * cols)
        throw std::invalid_argument("hungarian: " + std::to_string(cost.size()) + " entries for a " + std::to_string(rows) +
                                    "x" + std::to_string(cols) + " matrix");
    for (double c : cost)
        if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost");
    Assignment out;
    if (rows <= cols) {
        out.row_to_col = solve(cost, rows, cols);
    } else {
        std::vector<double> t(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = cost[r * cols + c];
        const auto col_to_row = solve(t, cols, rows);
        out.row_to_col.assign(rows, -1);
        for (std::size_t c = 0; c < cols; ++c) out.row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<int>(c);
    }
    for (std::size_t r = 0; r < rows; ++r)
        if (out.row_to_col[r] >= 0) out.cost += cost[r * cols + static_cast<std::size_t>(out.row_to_col[r])];
    return out;
}

}  // namespace franca
