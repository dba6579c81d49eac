#include "franca/rasa.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "franca/ops.hpp"
#include "franca/optim.hpp"
#include "franca/params.hpp"

namespace franca {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_features(const Tensor& features, const Tensor& coords) {
    if (features.ndim() != 2 || coords.ndim() != 2 || coords.cols() != 2 || coords.rows() != features.rows())
        throw ShapeError("position head: need features [N, D] and coords [N, 2], got " + shape_str(features.shape()) +
                         " and " + shape_str(coords.shape()));
    const std::size_t n = features.rows(), d = features.cols();
    const auto f = features.data();
    for (std::size_t r = 1; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j)
            if (f[r * d + j] != f[j]) return;
    throw std::invalid_argument("position head: degenerate input, all feature rows are identical");
}

Tensor pairwise_product(const Tensor& z, std::span<const double> transform, std::size_t d) {
    if (z.cols() != d) throw ShapeError("RASA transform of width " + std::to_string(d) + " applied to " + shape_str(z.shape()));
    const std::size_t rows = z.rows();
    std::vector<double> out(rows * d);
    Eigen::Map<RowMatrix>(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d)) =
        ConstMap(z.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d)) *
        ConstMap(transform.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    round_to_precision(out);
    return Tensor(z.shape(), std::move(out));
}

}  // namespace

PositionHead fit_position_head(const Tensor& features, const Tensor& coords, const FitOptions& options) {
    check_features(features, coords);
    if (!(options.lr > 0.0)) throw std::invalid_argument("fit_position_head: lr must be positive");
    PrecisionScope scope(Precision::f64);
    const std::size_t d = features.cols();
    const Tensor x = features.detach(), y = coords.detach();
    ParamStore p;
    p.add("w", Tensor::zeros({d, 2}, true));
    p.add("b", Tensor::zeros({2}, true));
    AdamState state;
    AdamWConfig opt;
    opt.lr = options.lr;
    auto loss_of = [&] { return mse(sigmoid(affine(x, p.at("w"), p.at("b"))), y); };
    for (std::size_t e = 0; e < options.epochs; ++e) {
        Tape tape;
        TapeScope on(tape);
        const Tensor loss = loss_of();
        tape.backward(loss);
        adamw_step(p, p.grads(), state, opt);
    }
    PositionHead head;
    head.loss = loss_of().item();
    head.weight = transpose(p.at("w").detach());
    head.bias = p.at("b").detach().clone();
    return head;
}

double best_constant_loss(const Tensor& coords) {
    if (coords.ndim() != 2 || coords.rows() == 0) throw ShapeError("best_constant_loss: expected [N, k] coordinates");
    const std::size_t n = coords.rows(), k = coords.cols();
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        double mean = 0.0;
        for (std::size_t r = 0; r < n; ++r) mean += coords[r * k + j];
        mean /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) total += (coords[r * k + j] - mean) * (coords[r * k + j] - mean);
    }
    return total / static_cast<double>(n);
}

Tensor patch_coordinates(std::size_t rows, std::size_t cols, std::size_t images) {
    std::vector<double> v;
    v.reserve(images * rows * cols * 2);
    for (std::size_t i = 0; i < images; ++i)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                v.push_back((static_cast<double>(r) + 0.5) / static_cast<double>(rows));
                v.push_back((static_cast<double>(c) + 0.5) / static_cast<double>(cols));
            }
    return Tensor({images * rows * cols, 2}, std::move(v));
}

double Plane::residual() const {
    return std::max({std::abs(norm(u_r) - 1.0), std::abs(norm(u_c) - 1.0), std::abs(dot(u_r, u_c))});
}

Plane gram_schmidt_pair(std::span<const double> w_r, std::span<const double> w_c) {
    if (w_r.size() != w_c.size() || w_r.empty()) throw ShapeError("gram_schmidt_pair: vectors must share a positive length");
    const double nr = norm(w_r);
    if (!(nr > 1e-12)) throw std::domain_error("gram_schmidt_pair: degenerate plane, w_r is zero");
    Plane p;
    p.u_r.assign(w_r.begin(), w_r.end());
    for (auto& v : p.u_r) v /= nr;
    p.u_c.assign(w_c.begin(), w_c.end());
    const double proj = dot(p.u_c, p.u_r);
    for (std::size_t i = 0; i < p.u_c.size(); ++i) p.u_c[i] -= proj * p.u_r[i];
    const double nc = norm(p.u_c);
    if (!(nc > 1e-9 * std::max(norm(w_c), 1e-300)))
        throw std::domain_error("gram_schmidt_pair: degenerate plane, w_c is parallel to w_r");
    for (auto& v : p.u_c) v /= nc;
    return p;
}

Tensor remove_plane(const Tensor& z, const Plane& plane) {
    const std::size_t d = plane.u_r.size();
    if (plane.u_c.size() != d || z.cols() != d)
        throw ShapeError("remove_plane: plane of width " + std::to_string(d) + " vs features " + shape_str(z.shape()));
    if (plane.residual() > 1e-6) throw std::invalid_argument("remove_plane: plane is not orthonormal");
    std::vector<double> out(z.data().begin(), z.data().end());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        std::span<double> row(out.data() + r * d, d);
        const double a = dot(row, plane.u_r), b = dot(row, plane.u_c);
        for (std::size_t j = 0; j < d; ++j) row[j] -= a * plane.u_r[j] + b * plane.u_c[j];
    }
    round_to_precision(out);
    return Tensor(z.shape(), std::move(out));
}

std::vector<double> plane_projector(const Plane& plane) {
    const std::size_t d = plane.u_r.size();
    std::vector<double> l(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            l[i * d + j] = (i == j ? 1.0 : 0.0) - plane.u_r[i] * plane.u_r[j] - plane.u_c[i] * plane.u_c[j];
    return l;
}

RASAState empty_rasa_state(std::size_t dim) {
    RASAState s;
    s.dim = dim;
    s.transform.assign(dim * dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) s.transform[i * dim + i] = 1.0;
    return s;
}

Tensor RASAState::transform_tensor() const { return Tensor({dim, dim}, transform); }

Tensor RASAState::apply(const Tensor& z) const { return pairwise_product(z, transform, dim); }

void RASAState::write_report(std::ostream& os) const {
    os << "iteration,L_pos,plane_norm_residual\n";
    char buf[96];
    for (const auto& it : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", it.iteration, it.loss, it.residual);
        os << buf;
    }
}

RASAState rasa_iterate(const Tensor& features, const Tensor& coords, std::size_t max_iterations, double patience,
                       const FitOptions& options) {
    if (max_iterations == 0) throw std::invalid_argument("rasa_iterate: max_iterations must be at least 1");
    if (!(patience >= 0.0 && patience < 1.0)) throw std::invalid_argument("rasa_iterate: patience must lie in [0, 1)");
    check_features(features, coords);
    PrecisionScope scope(Precision::f64);
    const std::size_t d = features.cols();
    RASAState state = empty_rasa_state(d);
    state.baseline_loss = best_constant_loss(coords);
    Tensor z = features.detach();
    for (std::size_t t = 1;; ++t) {
        if (state.planes.size() == max_iterations) {
            state.stop_reason = "max_iterations";
            break;
        }
        PositionHead head;
        try {
            head = fit_position_head(z, coords, options);
        } catch (const std::invalid_argument&) {
            state.stop_reason = "degenerate features";
            break;
        }
        RASAIteration rec;
        rec.iteration = t;
        rec.loss = head.loss;
        // Directions already removed carry no signal in z; restrict the head
        // to the remaining subspace so planes stay mutually orthogonal.
        const Tensor w = pairwise_product(head.weight, state.transform, d);
        const auto wd = w.data();
        Plane plane;
        bool degenerate = false;
        try {
            plane = gram_schmidt_pair(wd.subspan(0, d), wd.subspan(d, d));
            rec.residual = plane.residual();
        } catch (const std::domain_error&) {
            degenerate = true;
            rec.residual = std::nan("");
        }
        if (head.loss >= (1.0 - patience) * state.baseline_loss) {
            state.history.push_back(rec);
            state.stop_reason = "patience";
            break;
        }
        if (degenerate) {
            state.history.push_back(rec);
            state.stop_reason = "degenerate plane";
            break;
        }
        rec.removed = true;
        state.history.push_back(rec);
        z = remove_plane(z, plane);
        const auto proj = plane_projector(plane);
        std::vector<double> next(d * d);
        Eigen::Map<RowMatrix>(next.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) =
            ConstMap(state.transform.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)) *
            ConstMap(proj.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        state.transform = std::move(next);
        state.planes.push_back(std::move(plane));
    }
    return state;
}

std::pair<Tensor, Tensor> fold_into_linear(const Tensor& weight, const Tensor& bias, const RASAState& state) {
    if (weight.ndim() != 2 || weight.cols() != state.dim || bias.ndim() != 1 || bias.dim(0) != state.dim)
        throw ShapeError("fold_into_linear: layer " + shape_str(weight.shape()) + " / " + shape_str(bias.shape()) +
                         " does not match a transform of width " + std::to_string(state.dim));
    Tensor w = pairwise_product(weight, state.transform, state.dim);
    Tensor b = pairwise_product(reshape(bias.detach(), {1, state.dim}), state.transform, state.dim);
    return {w, reshape(b, {state.dim})};
}

}  // namespace franca
