#pragma once

#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "franca/tensor.hpp"

namespace franca {

// Linear position regressor y = sigmoid(Z W^T + b), W: [2, D] (rows: row, col).
struct PositionHead {
    Tensor weight;  // [2, D]
    Tensor bias;    // [2]
    double loss = 0.0;  // mean over rows of ||y_hat - y||^2 after fitting
};

struct FitOptions {
    std::size_t epochs = 300;
    double lr = 0.05;
};

// Full-batch AdamW from a zero initialization, in 64-bit precision.
PositionHead fit_position_head(const Tensor& features, const Tensor& coords, const FitOptions& options = {});

// Loss of predicting the per-column mean of coords.
double best_constant_loss(const Tensor& coords);

// Normalized patch-center coordinates (row, col) in raster order, repeated
// `images` times: [(images * rows * cols), 2].
Tensor patch_coordinates(std::size_t rows, std::size_t cols, std::size_t images = 1);

struct Plane {
    std::vector<double> u_r;
    std::vector<double> u_c;

    // max(| |u_r| - 1 |, | |u_c| - 1 |, |<u_r, u_c>|)
    double residual() const;
};

Plane gram_schmidt_pair(std::span<const double> w_r, std::span<const double> w_c);

// Z - <Z,u_r>u_r - <Z,u_c>u_c for every row of Z [..., D].
Tensor remove_plane(const Tensor& z, const Plane& plane);

// I - u_r u_r^T - u_c u_c^T, row-major D x D.
std::vector<double> plane_projector(const Plane& plane);

struct RASAIteration {
    std::size_t iteration = 0;  // 1-based
    double loss = 0.0;          // L_pos of the head fitted at this iteration
    double residual = 0.0;      // plane_norm_residual of the extracted plane
    bool removed = false;
};

struct RASAState {
    std::size_t dim = 0;
    std::vector<Plane> planes;        // removed planes, in order
    std::vector<double> transform;    // L = L^(1) ... L^(t), row-major D x D
    std::vector<RASAIteration> history;
    double baseline_loss = 0.0;       // best-constant predictor
    std::string stop_reason;

    std::size_t iterations() const { return planes.size(); }
    Tensor transform_tensor() const;
    // Z * L
    Tensor apply(const Tensor& z) const;
    void write_report(std::ostream& os) const;
};

RASAState empty_rasa_state(std::size_t dim);

// Each iteration fits a head on the current features, extracts its plane and
// removes it. Stops when the head improves on the best-constant loss by less
// than `patience` (relative; that plane is not removed), at a degenerate
// plane, or after `max_iterations` removals.
RASAState rasa_iterate(const Tensor& features, const Tensor& coords, std::size_t max_iterations = 9,
                       double patience = 0.01, const FitOptions& options = {});

// Final linear layer out = x W + b with W: [D_in, D], b: [D]. Returns
// (W L, b L) so that the layer emits the RASA-cleaned features directly.
std::pair<Tensor, Tensor> fold_into_linear(const Tensor& weight, const Tensor& bias, const RASAState& state);

}  // namespace franca
