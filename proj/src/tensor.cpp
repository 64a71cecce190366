#include "sjepa/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "sjepa/errors.hpp"

namespace sjepa {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::span<const double> values) {
    for (auto d : shape) {
        if (d == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) +
                             " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data.assign(values.begin(), values.end());
    return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
    if (!node) {
        throw ContractError("use of an undefined tensor");
    }
    return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
    auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    return Tensor(make_leaf(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return Tensor(make_leaf({}, std::span<const double>(&value, 1))); }

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data.size(); }

std::span<const double> Tensor::data() const { return checked(node_).data; }

std::span<double> Tensor::mutable_data() {
    checked(node_);
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    const auto& s = shape();
    if (s.size() != 2 || row >= s[0] || col >= s[1]) {
        throw DimensionError("at(" + std::to_string(row) + "," + std::to_string(col) + ") on " + shape_str(s));
    }
    return node_->data[row * s[1] + col];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    checked(node_);
    if (!node_->inputs.empty()) {
        throw ContractError("requires_grad can only be set on leaf tensors");
    }
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) {
        throw ContractError("tensor has no gradient");
    }
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    checked(node_);
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    checked(node_);
    node_->grad.clear();
}

Tensor Tensor::detach() const {
    const auto& n = checked(node_);
    return Tensor(make_leaf(n.shape, n.data));
}

Tape& Tape::current() {
    thread_local Tape tape;
    return tape;
}

void Tape::record(const std::shared_ptr<detail::Node>& node) {
    if (consumed_) {
        nodes_.clear();
        consumed_ = false;
    }
    node->generation = generation_;
    nodes_.push_back(node);
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
    ++generation_;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw ContractError("backward on an undefined tensor");
    }
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    const auto& root = loss.node();
    if (!root->requires_grad || root->inputs.empty()) {
        throw ContractError("backward: loss does not depend on any tensor requiring grad");
    }
    if (consumed_ || nodes_.empty() || root->generation != generation_) {
        throw ContractError("backward: tape already consumed; run a new forward pass first");
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& node = **it;
        if (!node.grad.empty() && node.backward) {
            node.backward(node);
        }
    }
    nodes_.clear();
    consumed_ = true;
    ++generation_;
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

}  // namespace sjepa
