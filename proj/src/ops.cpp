#include "franca/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace franca {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using NodePtr = std::shared_ptr<TensorNode>;

template <class... Ts>
Tape* tracking_tape(const Ts&... inputs) {
    Tape* tape = Tape::active();
    if (!tape) return nullptr;
    const bool any = (... || (inputs.defined() && inputs.requires_grad()));
    return any ? tape : nullptr;
}

Tensor finish(Shape shape, std::vector<double> values, Tape* tape) {
    round_to_precision(values);
    return Tensor(std::move(shape), std::move(values), tape != nullptr);
}

template <class Fn>
void record(Tape* tape, std::initializer_list<Tensor> inputs, const Tensor& out, Fn&& fn) {
    std::vector<Tensor> ins(inputs);
    tape->record(ins, out, std::forward<Fn>(fn));
}

bool wants(const NodePtr& n) { return n && n->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

std::size_t resolve_axis(const Tensor& x, int axis, const char* op) {
    const int nd = static_cast<int>(x.ndim());
    const int a = axis < 0 ? axis + nd : axis;
    if (a < 0 || a >= nd) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    }
    return static_cast<std::size_t>(a);
}

struct Lanes {
    std::size_t outer = 1, len = 1, inner = 1;
};

Lanes lanes_of(const Shape& shape, std::size_t axis) {
    Lanes l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tape* tape = tracking_tape(a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    Tensor out = finish(a.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {a, b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
            for (const auto& n : {an, bn}) {
                if (!wants(n)) continue;
                for (std::size_t i = 0; i < on->grad.size(); ++i) n->grad[i] += on->grad[i];
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tape* tape = tracking_tape(a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
    Tensor out = finish(a.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {a, b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
            if (wants(an))
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            if (wants(bn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
        });
    }
    return out;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "multiply");
    Tape* tape = tracking_tape(a, b);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    Tensor out = finish(a.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {a, b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
            const auto& ad = *an->data;
            const auto& bd = *bn->data;
            if (wants(an))
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bd[i];
            if (wants(bn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * ad[i];
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tape* tape = tracking_tape(a);
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * s;
    Tensor out = finish(a.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {a}, out, [an = a.node(), on = out.node(), s] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
        });
    }
    return out;
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
    if (bias.ndim() != 1 || x.ndim() == 0 || bias.dim(0) != x.cols()) {
        throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x, bias);
    const std::size_t rows = x.rows(), d = x.cols();
    std::vector<double> v(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) v[r * d + j] = x[r * d + j] + bias[j];
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x, bias}, out, [xn = x.node(), bn = bias.node(), on = out.node(), rows, d] {
            if (wants(xn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            if (wants(bn))
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) bn->grad[j] += on->grad[r * d + j];
        });
    }
    return out;
}

Tensor add_tiled(const Tensor& x, const Tensor& table) {
    if (x.ndim() != 3 || table.ndim() != 2 || table.dim(0) != x.dim(1) || table.dim(1) != x.dim(2)) {
        throw ShapeError("add_tiled: table " + shape_str(table.shape()) + " does not tile " +
                         shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x, table);
    const std::size_t batch = x.dim(0), block = table.size();
    std::vector<double> v(x.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < block; ++i) v[b * block + i] = x[b * block + i] + table[i];
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x, table}, out, [xn = x.node(), tn = table.node(), on = out.node(), batch, block] {
            if (wants(xn))
                for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
            if (wants(tn))
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < block; ++i) tn->grad[i] += on->grad[b * block + i];
        });
    }
    return out;
}

Tensor scale_batch(const Tensor& x, std::span<const double> factors) {
    if (x.ndim() == 0 || factors.size() != x.dim(0)) {
        throw ShapeError("scale_batch: " + std::to_string(factors.size()) + " factors for " +
                         shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x);
    const std::size_t block = x.size() / x.dim(0);
    std::vector<double> f(factors.begin(), factors.end());
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * f[i / block];
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node(), f = std::move(f), block] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * f[i / block];
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tape* tape = tracking_tape(a, b);
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto n = static_cast<Eigen::Index>(b.dim(1));
    std::vector<double> v(static_cast<std::size_t>(m * n));
    MutMap(v.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    Tensor out = finish({a.dim(0), b.dim(1)}, std::move(v), tape);
    if (tape) {
        record(tape, {a, b}, out, [an = a.node(), bn = b.node(), on = out.node(), m, k, n] {
            ConstMap dc(on->grad.data(), m, n);
            if (wants(an)) MutMap(an->grad.data(), m, k).noalias() += dc * ConstMap(bn->data->data(), k, n).transpose();
            if (wants(bn)) MutMap(bn->grad.data(), k, n).noalias() += ConstMap(an->data->data(), m, k).transpose() * dc;
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(a.shape()));
    Tape* tape = tracking_tape(a);
    const auto m = static_cast<Eigen::Index>(a.dim(0));
    const auto n = static_cast<Eigen::Index>(a.dim(1));
    std::vector<double> v(a.size());
    MutMap(v.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
    Tensor out = finish({a.dim(1), a.dim(0)}, std::move(v), tape);
    if (tape) {
        record(tape, {a}, out, [an = a.node(), on = out.node(), m, n] {
            MutMap(an->grad.data(), m, n) += ConstMap(on->grad.data(), n, m).transpose();
        });
    }
    return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() == 0 || w.ndim() != 2 || x.cols() != w.dim(0) ||
        (b.defined() && (b.ndim() != 1 || b.dim(0) != w.dim(1)))) {
        throw ShapeError("affine: shape mismatch x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) +
                         (b.defined() ? " b" + shape_str(b.shape()) : std::string()));
    }
    Tape* tape = b.defined() ? tracking_tape(x, w, b) : tracking_tape(x, w);
    const auto rows = static_cast<Eigen::Index>(x.rows());
    const auto in = static_cast<Eigen::Index>(w.dim(0));
    const auto outd = static_cast<Eigen::Index>(w.dim(1));
    std::vector<double> v(static_cast<std::size_t>(rows * outd));
    MutMap y(v.data(), rows, outd);
    y.noalias() = ConstMap(x.data().data(), rows, in) * ConstMap(w.data().data(), in, outd);
    if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), outd);
    Shape shape = x.shape();
    shape.back() = w.dim(1);
    Tensor out = finish(std::move(shape), std::move(v), tape);
    if (tape) {
        NodePtr bn = b.defined() ? b.node() : nullptr;
        std::vector<Tensor> ins{x, w};
        if (b.defined()) ins.push_back(b);
        tape->record(ins, out, [xn = x.node(), wn = w.node(), bn, on = out.node(), rows, in, outd] {
            ConstMap dy(on->grad.data(), rows, outd);
            if (wants(xn)) MutMap(xn->grad.data(), rows, in).noalias() += dy * ConstMap(wn->data->data(), in, outd).transpose();
            if (wants(wn)) MutMap(wn->grad.data(), in, outd).noalias() += ConstMap(xn->data->data(), rows, in).transpose() * dy;
            if (wants(bn)) Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), outd) += dy.colwise().sum();
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tape* tape = tracking_tape(x);
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node()] {
            const auto& xd = *xn->data;
            const double inv_sqrt_2pi = 0.5 * M_2_SQRTPI * M_SQRT1_2;
            for (std::size_t i = 0; i < xd.size(); ++i) {
                const double cdf = 0.5 * (1.0 + std::erf(xd[i] * M_SQRT1_2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xd[i] * xd[i]);
                xn->grad[i] += on->grad[i] * (cdf + xd[i] * pdf);
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tape* tape = tracking_tape(x);
    std::vector<double> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double z = x[i];
        v[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node()] {
            const auto& y = *on->data;
            for (std::size_t i = 0; i < y.size(); ++i) xn->grad[i] += on->grad[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

Tensor softmax_t(const Tensor& x, double temperature, int axis) {
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax_t: temperature must be positive");
    const std::size_t ax = resolve_axis(x, axis, "softmax_t");
    const Lanes l = lanes_of(x.shape(), ax);
    Tape* tape = tracking_tape(x);
    std::vector<double> v(x.size());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.len * l.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < l.len; ++k) mx = std::max(mx, x[base + k * l.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < l.len; ++k) {
                const double e = std::exp((x[base + k * l.inner] - mx) / temperature);
                v[base + k * l.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < l.len; ++k) v[base + k * l.inner] /= total;
        }
    }
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node(), l, temperature] {
            const auto& y = *on->data;
            const auto& dy = on->grad;
            for (std::size_t o = 0; o < l.outer; ++o) {
                for (std::size_t i = 0; i < l.inner; ++i) {
                    const std::size_t base = o * l.len * l.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < l.len; ++k) dot += dy[base + k * l.inner] * y[base + k * l.inner];
                    for (std::size_t k = 0; k < l.len; ++k) {
                        const std::size_t idx = base + k * l.inner;
                        xn->grad[idx] += y[idx] * (dy[idx] - dot) / temperature;
                    }
                }
            }
        });
    }
    return out;
}

Tensor l2_normalize(const Tensor& x, int axis) {
    const std::size_t ax = resolve_axis(x, axis, "l2_normalize");
    const Lanes l = lanes_of(x.shape(), ax);
    Tape* tape = tracking_tape(x);
    std::vector<double> v(x.size(), 0.0);
    std::vector<double> norms(l.outer * l.inner, 0.0);
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t i = 0; i < l.inner; ++i) {
            const std::size_t base = o * l.len * l.inner + i;
            double ss = 0.0;
            for (std::size_t k = 0; k < l.len; ++k) ss += x[base + k * l.inner] * x[base + k * l.inner];
            const double norm = std::sqrt(ss);
            norms[o * l.inner + i] = norm;
            if (norm == 0.0) continue;
            for (std::size_t k = 0; k < l.len; ++k) v[base + k * l.inner] = x[base + k * l.inner] / norm;
        }
    }
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node(), l, norms = std::move(norms)] {
            const auto& y = *on->data;
            const auto& dy = on->grad;
            for (std::size_t o = 0; o < l.outer; ++o) {
                for (std::size_t i = 0; i < l.inner; ++i) {
                    const double norm = norms[o * l.inner + i];
                    if (norm == 0.0) continue;
                    const std::size_t base = o * l.len * l.inner + i;
                    double dot = 0.0;
                    for (std::size_t k = 0; k < l.len; ++k) dot += dy[base + k * l.inner] * y[base + k * l.inner];
                    for (std::size_t k = 0; k < l.len; ++k) {
                        const std::size_t idx = base + k * l.inner;
                        xn->grad[idx] += (dy[idx] - y[idx] * dot) / norm;
                    }
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps < 0.0) throw std::invalid_argument("layer_norm: eps must be non-negative");
    const std::size_t d = x.cols();
    if (x.ndim() == 0 || gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match " + shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x, gain, bias);
    const std::size_t rows = x.rows();
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    std::vector<double> v(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = x.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double denom = var + eps;
        const double is = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (row[j] - mu) * is;
            v[r * d + j] = xhat[r * d + j] * gain[j] + bias[j];
        }
    }
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        record(tape, {x, gain, bias},
               out, [xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node(), rows, d,
                     xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                   const auto& dy = on->grad;
                   const auto& g = *gn->data;
                   std::vector<double> dxhat(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                       const double* dyr = dy.data() + r * d;
                       const double* xh = xhat.data() + r * d;
                       if (wants(gn))
                           for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dyr[j] * xh[j];
                       if (wants(bn))
                           for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dyr[j];
                       if (!wants(xn)) continue;
                       double m1 = 0.0, m2 = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                           dxhat[j] = dyr[j] * g[j];
                           m1 += dxhat[j];
                           m2 += dxhat[j] * xh[j];
                       }
                       m1 /= static_cast<double>(d);
                       m2 /= static_cast<double>(d);
                       for (std::size_t j = 0; j < d; ++j)
                           xn->grad[r * d + j] += inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
                   }
               });
    }
    return out;
}

Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    const std::size_t ax = resolve_axis(x, axis, "narrow");
    if (length == 0 || start + length > x.dim(ax)) {
        throw ShapeError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis " + std::to_string(ax) + " of " + shape_str(x.shape()));
    }
    const Lanes l = lanes_of(x.shape(), ax);
    Tape* tape = tracking_tape(x);
    Shape shape = x.shape();
    shape[ax] = length;
    std::vector<double> v(numel(shape));
    const std::size_t chunk = length * l.inner;
    for (std::size_t o = 0; o < l.outer; ++o) {
        const double* src = x.data().data() + (o * l.len + start) * l.inner;
        std::copy(src, src + chunk, v.begin() + static_cast<std::ptrdiff_t>(o * chunk));
    }
    Tensor out = finish(std::move(shape), std::move(v), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node(), l, start, chunk] {
            for (std::size_t o = 0; o < l.outer; ++o) {
                double* dst = xn->grad.data() + (o * l.len + start) * l.inner;
                const double* src = on->grad.data() + o * chunk;
                for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& x, std::size_t width) { return narrow(x, -1, 0, width); }

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t ax = resolve_axis(parts[0], axis, "concat");
    Shape shape = parts[0].shape();
    shape[ax] = 0;
    for (const auto& p : parts) {
        Shape a = p.shape(), b = parts[0].shape();
        if (a.size() != b.size()) throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
        a[ax] = b[ax] = 0;
        if (a != b) throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        shape[ax] += p.dim(ax);
    }
    Tape* tape = nullptr;
    if (Tape::active())
        for (const auto& p : parts)
            if (p.requires_grad()) tape = Tape::active();
    const Lanes l = lanes_of(shape, ax);
    std::vector<double> v(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t chunk = p.dim(ax) * l.inner;
        for (std::size_t o = 0; o < l.outer; ++o) {
            const double* src = p.data().data() + o * chunk;
            std::copy(src, src + chunk, v.begin() + static_cast<std::ptrdiff_t>((o * l.len + off) * l.inner));
        }
        off += p.dim(ax);
    }
    Tensor out = finish(std::move(shape), std::move(v), tape);
    if (tape) {
        std::vector<NodePtr> nodes;
        std::vector<std::size_t> widths;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.dim(ax));
        }
        tape->record(parts, out, [nodes, widths, offsets, on = out.node(), l] {
            for (std::size_t p = 0; p < nodes.size(); ++p) {
                if (!wants(nodes[p])) continue;
                const std::size_t chunk = widths[p] * l.inner;
                for (std::size_t o = 0; o < l.outer; ++o) {
                    const double* src = on->grad.data() + (o * l.len + offsets[p]) * l.inner;
                    double* dst = nodes[p]->grad.data() + o * chunk;
                    for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tape* tape = tracking_tape(x);
    Tensor out = finish(std::move(shape), x.to_vector(), tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node()] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tape* tape = tracking_tape(x);
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = finish({}, {s}, tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node()] {
            for (auto& g : xn->grad) g += on->grad[0];
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    Tape* tape = tracking_tape(x);
    double s = 0.0;
    for (double v : x.data()) s += v;
    const double n = static_cast<double>(x.size());
    Tensor out = finish({}, {s / n}, tape);
    if (tape) {
        record(tape, {x}, out, [xn = x.node(), on = out.node(), n] {
            for (auto& g : xn->grad) g += on->grad[0] / n;
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, const Tensor& targets, Reduction reduction) {
    require_same_shape(logits, targets, "cross_entropy");
    if (logits.ndim() == 0) throw ShapeError("cross_entropy: logits need a class axis");
    Tape* tape = tracking_tape(logits, targets);
    const std::size_t rows = logits.rows(), k = logits.cols();
    std::vector<double> lse(rows);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* l = logits.data().data() + r * k;
        const double* t = targets.data().data() + r * k;
        const double mx = *std::max_element(l, l + k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += std::exp(l[j] - mx);
        lse[r] = mx + std::log(s);
        for (std::size_t j = 0; j < k; ++j) total += t[j] * (lse[r] - l[j]);
    }
    const double norm = reduction == Reduction::mean ? 1.0 / static_cast<double>(rows) : 1.0;
    Tensor out = finish({}, {total * norm}, tape);
    if (tape) {
        record(tape, {logits, targets}, out,
               [ln = logits.node(), tn = targets.node(), on = out.node(), rows, k, norm, lse = std::move(lse)] {
                   const double g = on->grad[0] * norm;
                   const auto& l = *ln->data;
                   const auto& t = *tn->data;
                   for (std::size_t r = 0; r < rows; ++r) {
                       double tsum = 0.0;
                       for (std::size_t j = 0; j < k; ++j) tsum += t[r * k + j];
                       for (std::size_t j = 0; j < k; ++j) {
                           const std::size_t i = r * k + j;
                           if (wants(ln)) ln->grad[i] += g * (std::exp(l[i] - lse[r]) * tsum - t[i]);
                           if (wants(tn)) tn->grad[i] += g * (lse[r] - l[i]);
                       }
                   }
               });
    }
    return out;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse");
    Tape* tape = tracking_tape(pred, target);
    const double rows = static_cast<double>(pred.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
    Tensor out = finish({}, {total / rows}, tape);
    if (tape) {
        record(tape, {pred, target}, out, [pn = pred.node(), tn = target.node(), on = out.node(), rows] {
            const auto& p = *pn->data;
            const auto& t = *tn->data;
            const double g = on->grad[0] * 2.0 / rows;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (wants(pn)) pn->grad[i] += g * (p[i] - t[i]);
                if (wants(tn)) tn->grad[i] -= g * (p[i] - t[i]);
            }
        });
    }
    return out;
}

Tensor mask_rows(const Tensor& x, std::span<const std::uint8_t> mask, const Tensor& token) {
    const std::size_t rows = x.rows(), d = x.cols();
    if (mask.size() != rows || token.shape() != Shape{d}) {
        throw ShapeError("mask_rows: mask of " + std::to_string(mask.size()) + " rows / token " +
                         shape_str(token.shape()) + " do not match " + shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x, token);
    std::vector<double> v(x.to_vector());
    for (std::size_t r = 0; r < rows; ++r)
        if (mask[r]) std::copy(token.data().begin(), token.data().end(), v.begin() + static_cast<std::ptrdiff_t>(r * d));
    Tensor out = finish(x.shape(), std::move(v), tape);
    if (tape) {
        std::vector<std::uint8_t> m(mask.begin(), mask.end());
        record(tape, {x, token}, out, [xn = x.node(), tn = token.node(), on = out.node(), m = std::move(m), d] {
            for (std::size_t r = 0; r < m.size(); ++r) {
                const double* g = on->grad.data() + r * d;
                if (m[r]) {
                    if (wants(tn))
                        for (std::size_t j = 0; j < d; ++j) tn->grad[j] += g[j];
                } else if (wants(xn)) {
                    for (std::size_t j = 0; j < d; ++j) xn->grad[r * d + j] += g[j];
                }
            }
        });
    }
    return out;
}

Tensor prepend_token(const Tensor& x, const Tensor& token) {
    if (x.ndim() != 3 || token.shape() != Shape{x.dim(2)}) {
        throw ShapeError("prepend_token: token " + shape_str(token.shape()) + " does not fit " + shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x, token);
    const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
    std::vector<double> v(batch * (n + 1) * d);
    for (std::size_t b = 0; b < batch; ++b) {
        auto dst = v.begin() + static_cast<std::ptrdiff_t>(b * (n + 1) * d);
        std::copy(token.data().begin(), token.data().end(), dst);
        const double* src = x.data().data() + b * n * d;
        std::copy(src, src + n * d, dst + static_cast<std::ptrdiff_t>(d));
    }
    Tensor out = finish({batch, n + 1, d}, std::move(v), tape);
    if (tape) {
        record(tape, {x, token}, out, [xn = x.node(), tn = token.node(), on = out.node(), batch, n, d] {
            for (std::size_t b = 0; b < batch; ++b) {
                const double* g = on->grad.data() + b * (n + 1) * d;
                if (wants(tn))
                    for (std::size_t j = 0; j < d; ++j) tn->grad[j] += g[j];
                if (wants(xn))
                    for (std::size_t i = 0; i < n * d; ++i) xn->grad[b * n * d + i] += g[d + i];
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
    const std::size_t rows = x.rows(), d = x.cols();
    if (indices.empty()) throw ShapeError("gather_rows: empty index list");
    for (auto i : indices) {
        if (i >= rows) throw ShapeError("gather_rows: row " + std::to_string(i) + " outside " + shape_str(x.shape()));
    }
    Tape* tape = tracking_tape(x);
    std::vector<double> v(indices.size() * d);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const double* src = x.data().data() + indices[r] * d;
        std::copy(src, src + d, v.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    Tensor out = finish({indices.size(), d}, std::move(v), tape);
    if (tape) {
        std::vector<std::size_t> idx(indices.begin(), indices.end());
        record(tape, {x}, out, [xn = x.node(), on = out.node(), idx = std::move(idx), d] {
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < d; ++j) xn->grad[idx[r] * d + j] += on->grad[r * d + j];
        });
    }
    return out;
}

}  // namespace franca
