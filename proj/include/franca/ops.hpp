#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "franca/tensor.hpp"

// Differentiable operations. Each op records itself on the active tape when a
// tape is active and at least one input requires gradient; otherwise it is a
// plain forward computation. Broadcasting is limited to the row-wise forms
// named below (add_row, add_tiled, layer_norm's affine); every other shape
// mismatch is a ShapeError.
namespace franca {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

// x[..., D] + bias[D]
Tensor add_row(const Tensor& x, const Tensor& bias);
// x[B, T, D] + table[T, D] for every b.
Tensor add_tiled(const Tensor& x, const Tensor& table);
// x[B, ...] * factors[b]; factors are constants (stochastic depth).
Tensor scale_batch(const Tensor& x, std::span<const double> factors);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[..., I] * w[I, O] + b[O]; `b` may be undefined.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Negative axis counts from the end.
Tensor softmax_t(const Tensor& x, double temperature, int axis = -1);
// Zero lanes stay zero.
Tensor l2_normalize(const Tensor& x, int axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

Tensor slice_cols(const Tensor& x, std::size_t width);
Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

enum class Reduction { mean, sum };

// Rows of `targets` are probability distributions; logits are turned into
// log-probabilities with a stable log-softmax. mean: averaged over rows.
Tensor cross_entropy(const Tensor& logits, const Tensor& targets, Reduction reduction = Reduction::mean);
// (1/rows) * sum_rows ||pred_row - target_row||^2
Tensor mse(const Tensor& pred, const Tensor& target);

// Multi-head self-attention core: qkv[B, T, 3D] laid out as [q | k | v],
// each split into `heads` contiguous chunks. Returns softmax(q k^T / sqrt(dh)) v
// with heads concatenated, shape [B, T, D].
Tensor attention(const Tensor& qkv, std::size_t heads);

// Rows r of x (leading dims flattened) with mask[r] != 0 are replaced by token.
Tensor mask_rows(const Tensor& x, std::span<const std::uint8_t> mask, const Tensor& token);
// x[B, n, D] -> [B, n+1, D] with token[D] in slot 0 of every item.
Tensor prepend_token(const Tensor& x, const Tensor& token);
// Selects rows (leading dims flattened); result is [indices.size(), D].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace franca
