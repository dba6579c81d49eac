#include <Eigen/Core>
#include <cmath>

#include "franca/ops.hpp"

namespace franca {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

void softmax_rows(RowMat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
}

}  // namespace

Tensor attention(const Tensor& qkv, std::size_t heads) {
    if (qkv.ndim() != 3 || heads == 0 || qkv.dim(2) % (3 * heads) != 0) {
        throw ShapeError("attention: qkv " + shape_str(qkv.shape()) + " cannot be split into " +
                         std::to_string(heads) + " heads");
    }
    const std::size_t batch = qkv.dim(0), tokens = qkv.dim(1), width = qkv.dim(2) / 3;
    const std::size_t dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto t = static_cast<Eigen::Index>(tokens);
    const auto h = static_cast<Eigen::Index>(dh);
    const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * width));
    const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(width));

    Tape* tape = Tape::active();
    if (tape && !qkv.requires_grad()) tape = nullptr;

    std::vector<double> out_v(batch * tokens * width);
    std::vector<RowMat> probs;
    if (tape) probs.reserve(batch * heads);
    RowMat s(t, t);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* base = qkv.data().data() + b * tokens * 3 * width;
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Strided q(base + hd * dh, t, h, in_stride);
            Strided k(base + width + hd * dh, t, h, in_stride);
            Strided v(base + 2 * width + hd * dh, t, h, in_stride);
            s.noalias() = (q * k.transpose()) * scale;
            softmax_rows(s);
            MutStrided o(out_v.data() + b * tokens * width + hd * dh, t, h, out_stride);
            o.noalias() = s * v;
            if (tape) probs.push_back(s);
        }
    }
    round_to_precision(out_v);
    Tensor out({batch, tokens, width}, std::move(out_v), tape != nullptr);
    if (tape) {
        Tensor ins[] = {qkv};
        tape->record(ins, out, [qn = qkv.node(), on = out.node(), probs = std::move(probs), batch, tokens, width,
                                heads, dh, scale, t, h, in_stride, out_stride] {
            RowMat dp(t, t), ds(t, t);
            for (std::size_t b = 0; b < batch; ++b) {
                const double* base = qn->data->data() + b * tokens * 3 * width;
                double* gbase = qn->grad.data() + b * tokens * 3 * width;
                for (std::size_t hd = 0; hd < heads; ++hd) {
                    const RowMat& p = probs[b * heads + hd];
                    Strided q(base + hd * dh, t, h, in_stride);
                    Strided k(base + width + hd * dh, t, h, in_stride);
                    Strided v(base + 2 * width + hd * dh, t, h, in_stride);
                    Strided d_o(on->grad.data() + b * tokens * width + hd * dh, t, h, out_stride);
                    MutStrided dq(gbase + hd * dh, t, h, in_stride);
                    MutStrided dk(gbase + width + hd * dh, t, h, in_stride);
                    MutStrided dv(gbase + 2 * width + hd * dh, t, h, in_stride);
                    dv.noalias() += p.transpose() * d_o;
                    dp.noalias() = d_o * v.transpose();
                    const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
                    ds = p.array() * (dp.colwise() - row_dot).array();
                    dq.noalias() += (ds * k) * scale;
                    dk.noalias() += (ds.transpose() * q) * scale;
                }
            }
        });
    }
    return out;
}

}  // namespace franca
