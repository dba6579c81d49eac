#include "franca/tensor.hpp"

#include <atomic>
#include <sstream>

namespace franca {

namespace {

thread_local Precision g_precision = Precision::f32;
thread_local Tape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Precision precision() { return g_precision; }

double round_to_precision(double v) {
    return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void round_to_precision(std::span<double> values) {
    if (g_precision != Precision::f32) return;
    for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

PrecisionScope::PrecisionScope(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = saved_; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != values.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::make_shared<std::vector<double>>(std::move(values));
    node->requires_grad = requires_grad;
    node_ = std::move(node);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::of(Shape shape, std::initializer_list<double> values) {
    return Tensor(std::move(shape), std::vector<double>(values));
}

std::size_t Tensor::rows() const {
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < node_->shape.size(); ++i) r *= node_->shape[i];
    return r;
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return (*node_->data)[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
    return *this;
}

std::optional<std::size_t> Tensor::node_id() const {
    const Tape* tape = Tape::active();
    if (!tape || node_->tape_id != tape->id()) return std::nullopt;
    return node_->node_id;
}

Tensor Tensor::detach() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    return Tensor(std::move(node));
}

Tensor Tensor::view() const {
    auto node = std::make_shared<TensorNode>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->requires_grad = node_->requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
    Tensor t(node_->shape, *node_->data, node_->requires_grad);
    return t;
}

Tape::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

Tape* Tape::active() { return g_active_tape; }

std::size_t Tape::ensure_node(const std::shared_ptr<TensorNode>& node) {
    if (node->tape_id == id_) return node->node_id;
    node->tape_id = id_;
    node->node_id = nodes_.size();
    nodes_.push_back(node);
    return node->node_id;
}

void Tape::record(std::span<const Tensor> inputs, const Tensor& output, BackwardFn backward) {
    Record rec;
    rec.inputs.reserve(inputs.size());
    for (const auto& in : inputs) rec.inputs.push_back(ensure_node(in.node()));
    rec.output = ensure_node(output.node());
    rec.backward = std::move(backward);
    records_.push_back(std::move(rec));
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    const auto& loss_node = loss.node();
    if (loss_node->tape_id != id_) throw std::invalid_argument("backward: loss is not recorded on this tape");
    for (auto& node : nodes_) {
        if (node->requires_grad) node->grad.assign(node->data->size(), 0.0);
        else node->grad.clear();
    }
    loss_node->grad.assign(1, 1.0);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

TapeScope::TapeScope(Tape& tape) : saved_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = saved_; }

void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

}  // namespace franca
