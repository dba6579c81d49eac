#pragma once

#include <span>
#include <vector>

namespace franca {

struct Assignment {
    std::vector<int> row_to_col;  // -1 for rows left unassigned (rows > cols)
    double cost = 0.0;
};

// Minimum-cost assignment on a row-major rows x cols matrix; every row is
// matched when rows <= cols, otherwise every column is.
Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);

}  // namespace franca
