#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace franca {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Arithmetic is carried out in double. Under Precision::f32 every op output
// and every parameter update is rounded to the nearest binary32 value, so
// tensors hold exactly what a 32-bit pipeline would store.
enum class Precision { f32, f64 };

Precision precision();
double round_to_precision(double v);
void round_to_precision(std::span<double> values);

class PrecisionScope {
public:
    explicit PrecisionScope(Precision p);
    ~PrecisionScope();
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision saved_;
};

struct TensorNode {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::vector<double> grad;  // empty until backward allocates it
    bool requires_grad = false;
    std::uint64_t tape_id = 0;  // 0: not on any tape
    std::size_t node_id = 0;
};

class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor of(Shape shape, std::initializer_list<double> values);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data->size(); }
    // Product of all but the last dimension.
    std::size_t rows() const;
    std::size_t cols() const { return ndim() == 0 ? 1 : node_->shape.back(); }

    std::span<const double> data() const { return *node_->data; }
    // In-place access for optimizers and finite-difference probes. Mutates every
    // view sharing this buffer.
    std::span<double> mutable_data() { return *node_->data; }
    double operator[](std::size_t i) const { return (*node_->data)[i]; }
    double item() const;
    std::vector<double> to_vector() const { return *node_->data; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    // Position on the tape currently active on this thread, if recorded there.
    std::optional<std::size_t> node_id() const;

    // Shares the buffer, never tracks gradient.
    Tensor detach() const;
    // Shares the buffer, keeps requires_grad, owns a separate gradient slot.
    // Used to give each worker tape its own gradients over one parameter set.
    Tensor view() const;
    Tensor clone() const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

// Ordered record of differentiable operations. Inputs of a record always have
// smaller node ids than its output, so reverse iteration is a valid
// topological order.
class Tape {
public:
    using BackwardFn = std::function<void()>;

    struct Record {
        std::vector<std::size_t> inputs;
        std::size_t output;
        BackwardFn backward;
    };

    Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::uint64_t id() const { return id_; }
    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<Record>& records() const { return records_; }

    // Appends an operation; `output` becomes a tracked node.
    void record(std::span<const Tensor> inputs, const Tensor& output, BackwardFn backward);

    // Clears and recomputes every tracked gradient from `loss` (scalar).
    void backward(const Tensor& loss);

    // Tape that ops on this thread record onto, or nullptr.
    static Tape* active();

private:
    friend class TapeScope;
    std::size_t ensure_node(const std::shared_ptr<TensorNode>& node);

    std::uint64_t id_;
    std::vector<std::shared_ptr<TensorNode>> nodes_;
    std::vector<Record> records_;
};

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* saved_;
};

// Runs `tape.backward(loss)`; kept as a free function for symmetry with ops.
void backward(Tape& tape, const Tensor& loss);

}  // namespace franca
